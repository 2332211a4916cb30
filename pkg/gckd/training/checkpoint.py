"""Binary checkpoints of the full training state.

Layout: the 8-byte magic, a little-endian uint32 format version, a uint64
header length, a UTF-8 JSON header, then every array's raw little-endian
bytes in header order. The header lists each array's name, dtype and
shape along with the scalar state (iteration, optimizer step count, EMA
momentum, bank cursors, RNG state) and caller metadata. Floats are stored
as float64 so a save/load round trip is bit-exact.
"""
import json
import logging
from pathlib import Path
import struct
from typing import Any, Dict, List, Tuple

import numpy as np

from gckd.errors import DataIOError, StructuralError
from gckd.model.distillation import TeacherStudentPair
from gckd.model.memory import BANK_TAGS, MemoryBanks
from gckd.model.params import ParamSet
from gckd.training.optimizer import AdamW
from gckd.training.trainer import TrainState

logger = logging.getLogger(__name__)

MAGIC = b"GCKDCKPT"
FORMAT_VERSION = 1
_DTYPES = {"f8": np.dtype("<f8"), "i8": np.dtype("<i8")}


def _collect_arrays(state: TrainState) -> List[Tuple[str, np.ndarray]]:
    arrays: List[Tuple[str, np.ndarray]] = []
    arrays += [(f"student/{n}", a) for n, a in state.pair.student.items()]
    arrays += [(f"teacher/{n}", a) for n, a in state.pair.teacher.items()]
    arrays += [(f"adam.m/{n}", a) for n, a in state.optimizer.m.items()]
    arrays += [(f"adam.v/{n}", a) for n, a in state.optimizer.v.items()]
    for name, bank in state.banks.items():
        arrays.append((f"bank/{name}/data", bank.data))
        arrays.append((f"bank/{name}/stamps", bank.stamps))
    return arrays


def save_checkpoint(path: Path, state: TrainState, meta: Dict[str, Any]) -> Path:
    """Write ``state`` and JSON-serializable ``meta`` to ``path``."""
    path = Path(path)
    arrays = _collect_arrays(state)
    opt = state.optimizer
    header = {
        "arrays": [
            {"name": name, "dtype": "i8" if arr.dtype.kind == "i" else "f8", "shape": list(arr.shape)}
            for name, arr in arrays
        ],
        "iteration": state.iteration,
        "total_steps": state.total_steps,
        "momentum": state.pair.momentum,
        "optimizer": {"t": opt.t, "lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps,
                      "weight_decay": opt.weight_decay},
        "banks": {name: {"capacity": bank.capacity, "dim": bank.dim, "count": bank.count,
                         "write_cursor": bank.write_cursor} for name, bank in state.banks.items()},
        "rng": state.rng.bit_generator.state,
        "meta": meta,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<IQ", FORMAT_VERSION, len(header_bytes)))
            f.write(header_bytes)
            for (name, arr), spec in zip(arrays, header["arrays"]):
                f.write(np.ascontiguousarray(arr, dtype=_DTYPES[spec["dtype"]]).tobytes())
    except OSError as e:
        raise DataIOError(f"cannot write checkpoint {path}: {e}") from e
    logger.info(f"Saved checkpoint {path} at iteration {state.iteration}")
    return path


def _read_arrays(blob: bytes, offset: int, specs: List[dict], path: Path) -> Dict[str, np.ndarray]:
    arrays = {}
    for spec in specs:
        dtype = _DTYPES.get(spec["dtype"])
        if dtype is None:
            raise DataIOError(f"{path}: unknown dtype {spec['dtype']!r} for {spec['name']}")
        shape = tuple(spec["shape"])
        nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
        if offset + nbytes > len(blob):
            raise DataIOError(f"{path}: truncated while reading {spec['name']}")
        arrays[spec["name"]] = np.frombuffer(blob, dtype=dtype, count=nbytes // dtype.itemsize,
                                             offset=offset).reshape(shape).astype(dtype.newbyteorder("="))
        offset += nbytes
    if offset != len(blob):
        raise DataIOError(f"{path}: {len(blob) - offset} trailing bytes after the last array")
    return arrays


def _params(arrays: Dict[str, np.ndarray], prefix: str) -> ParamSet:
    return ParamSet({n[len(prefix):]: a for n, a in arrays.items() if n.startswith(prefix)})


def load_checkpoint(path: Path) -> Tuple[TrainState, Dict[str, Any]]:
    """Return (TrainState, meta) exactly as saved."""
    path = Path(path)
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise DataIOError(f"cannot read checkpoint {path}: {e}") from e
    fixed = len(MAGIC) + struct.calcsize("<IQ")
    if len(blob) < fixed or blob[:len(MAGIC)] != MAGIC:
        raise DataIOError(f"{path} is not a gckd checkpoint")
    version, header_len = struct.unpack("<IQ", blob[len(MAGIC):fixed])
    if version != FORMAT_VERSION:
        raise DataIOError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(blob[fixed:fixed + header_len].decode("utf-8"))
    except ValueError as e:
        raise DataIOError(f"{path}: malformed checkpoint header: {e}") from e
    arrays = _read_arrays(blob, fixed + header_len, header["arrays"], path)

    student = _params(arrays, "student/")
    teacher = _params(arrays, "teacher/")
    try:
        pair = TeacherStudentPair(student, teacher, header["momentum"])
    except StructuralError as e:
        raise StructuralError(f"{path}: {e}") from e

    opt_h = header["optimizer"]
    optimizer = AdamW(opt_h["lr"], opt_h["beta1"], opt_h["beta2"], opt_h["eps"], opt_h["weight_decay"])
    optimizer.t = opt_h["t"]
    optimizer.m = {n[len("adam.m/"):]: a for n, a in arrays.items() if n.startswith("adam.m/")}
    optimizer.v = {n[len("adam.v/"):]: a for n, a in arrays.items() if n.startswith("adam.v/")}

    bank_h = header["banks"]
    first = bank_h[next(iter(BANK_TAGS))]
    banks = MemoryBanks(first["capacity"], first["dim"])
    for name, bank in banks.items():
        info = bank_h[name]
        bank.data = arrays[f"bank/{name}/data"]
        bank.stamps = arrays[f"bank/{name}/stamps"]
        bank.count = info["count"]
        bank.write_cursor = info["write_cursor"]

    rng = np.random.default_rng()
    rng.bit_generator.state = header["rng"]
    state = TrainState(pair=pair, banks=banks, optimizer=optimizer, rng=rng,
                       iteration=header["iteration"], total_steps=header["total_steps"])
    return state, header["meta"]


def read_meta(path: Path) -> Dict[str, Any]:
    """Metadata block only, without materializing the arrays."""
    path = Path(path)
    try:
        with open(path, "rb") as f:
            prefix = f.read(len(MAGIC) + struct.calcsize("<IQ"))
            if len(prefix) < len(MAGIC) + struct.calcsize("<IQ") or prefix[:len(MAGIC)] != MAGIC:
                raise DataIOError(f"{path} is not a gckd checkpoint")
            _, header_len = struct.unpack("<IQ", prefix[len(MAGIC):])
            return json.loads(f.read(header_len).decode("utf-8"))["meta"]
    except OSError as e:
        raise DataIOError(f"cannot read checkpoint {path}: {e}") from e
