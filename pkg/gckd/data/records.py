"""Line-delimited record files for datasets and the target ground-truth sidecar.

Every file starts with a header line carrying the config fingerprint; each
following line is one sample: domain, modality, identity and vector values.
Floats are written with Python's shortest round-trip repr.
"""
import json
import logging
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from gckd.data.synth import GroundTruth, Sample, SyntheticDataset
from gckd.errors import DataIOError

logger = logging.getLogger(__name__)

SOURCE_FILE = "source.jsonl"
TARGET_FILE = "target.jsonl"
GROUND_TRUTH_FILE = "target_ground_truth.json"


def write_records(path: Path, samples: List[Sample], fingerprint: str) -> int:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(json.dumps({"fingerprint": fingerprint, "count": len(samples)}) + "\n")
        for s in samples:
            record = {
                "domain": s.domain,
                "modality": s.modality,
                "identity": s.identity,
                "values": [float(v) for v in s.raw],
            }
            f.write(json.dumps(record) + "\n")
    return len(samples)


def read_records(path: Path) -> Tuple[str, List[Sample]]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise DataIOError(f"cannot read {path}: {e}") from e
    if not lines:
        raise DataIOError(f"{path} is empty")
    try:
        header = json.loads(lines[0])
        samples = []
        for line in lines[1:]:
            rec = json.loads(line)
            samples.append(Sample(np.array(rec["values"], dtype=np.float64), rec["identity"],
                                  rec["modality"], rec["domain"]))
    except (ValueError, KeyError) as e:
        raise DataIOError(f"malformed record file {path}: {e}") from e
    if header.get("count") != len(samples):
        raise DataIOError(f"{path}: header announces {header.get('count')} records, found {len(samples)}")
    return header["fingerprint"], samples


def write_ground_truth(path: Path, truth: GroundTruth, fingerprint: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump({
            "fingerprint": fingerprint,
            "image_ids": [int(i) for i in truth.image_ids],
            "text_ids": [int(i) for i in truth.text_ids],
        }, f)
        f.write("\n")


def read_ground_truth(path: Path) -> Tuple[str, GroundTruth]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        return data["fingerprint"], GroundTruth(np.array(data["image_ids"], dtype=np.int64),
                                                np.array(data["text_ids"], dtype=np.int64))
    except OSError as e:
        raise DataIOError(f"cannot read {path}: {e}") from e
    except (ValueError, KeyError) as e:
        raise DataIOError(f"malformed ground-truth file {path}: {e}") from e


def save_dataset(out_dir: Path, dataset: SyntheticDataset, truth: GroundTruth, fingerprint: str) -> dict:
    """Write source, target and sidecar files; return record counts."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        counts = {
            "source": write_records(out_dir / SOURCE_FILE, dataset.source_set, fingerprint),
            "target": write_records(out_dir / TARGET_FILE, dataset.target_set, fingerprint),
        }
        write_ground_truth(out_dir / GROUND_TRUTH_FILE, truth, fingerprint)
    except OSError as e:
        raise DataIOError(f"cannot write dataset to {out_dir}: {e}") from e
    logger.info(f"Wrote dataset to {out_dir}: {counts}")
    return counts


def load_dataset(data_dir: Path) -> Tuple[str, SyntheticDataset]:
    """Load the training-side files (no ground truth)."""
    data_dir = Path(data_dir)
    fp_source, source = read_records(data_dir / SOURCE_FILE)
    fp_target, target = read_records(data_dir / TARGET_FILE)
    if fp_source != fp_target:
        raise DataIOError(f"source and target files in {data_dir} come from different configs")
    dataset = SyntheticDataset(
        source_images=[s for s in source if s.modality == "image"],
        source_texts=[s for s in source if s.modality == "text"],
        target_images=[s for s in target if s.modality == "image"],
        target_texts=[s for s in target if s.modality == "text"],
    )
    return fp_source, dataset


def load_ground_truth(data_dir: Path, fingerprint: Optional[str] = None) -> GroundTruth:
    """Read the sidecar; with ``fingerprint`` given it must match the one it was written with."""
    path = Path(data_dir) / GROUND_TRUTH_FILE
    found, truth = read_ground_truth(path)
    if fingerprint is not None and found != fingerprint:
        raise DataIOError(f"{path} was written for config {found[:12]}, the dataset files for {fingerprint[:12]}")
    return truth
