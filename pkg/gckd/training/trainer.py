"""Source warm-up and GCKD adaptation.

One adaptation step, in order: teacher forward on the target batches,
pseudo targets, student forward on source pairs and target batches, graph
propagation of the target features with both memories, positive/negative
pair selection, losses, AdamW step on the student, EMA update of the
teacher, and queue pushes (teacher target features, student source
features).

Target batches reach this module without identity labels; the trainer
never sees the ground-truth sidecar.
"""
from dataclasses import dataclass, field
import logging
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from gckd.data.synth import Sample, batch_iter, stack_raw
from gckd.errors import UsageError
from gckd.losses.contrastive import cd_itc, in_batch_contrastive
from gckd.losses.matching import MatchingHead, cd_itm, mine_hard_negatives, select_positives
from gckd.losses.report import LossConfig, LossReport, total
from gckd.model.distillation import TeacherStudentPair, ema_update, pseudo_targets
from gckd.model.encoder import FeatureBatch, encode, encode_backward
from gckd.model.graph import (
    CrossDomainGraph,
    GraphConfig,
    build_graph,
    dump_edges,
    extract_domain_aware,
    gnn_backward,
    gnn_forward_cached,
    gnn_layers,
)
from gckd.model.memory import MemoryBanks, MemoryConfig
from gckd.model.params import Grads, ParamSet, clone_params, gnn_layer_names
from gckd.training.config import TrainConfig
from gckd.training.optimizer import AdamW, clip_by_global_norm, cosine_lr

logger = logging.getLogger(__name__)

SourcePair = Tuple[Sample, Sample]


@dataclass
class AdaptSetup:
    """Everything an adaptation step needs besides the state and the batches."""

    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    memory: MemoryConfig = field(default_factory=MemoryConfig)
    use_graph: bool = True  # False reproduces the distillation-only ablation
    dump_dir: Optional[Path] = None


@dataclass
class TrainState:
    pair: TeacherStudentPair
    banks: MemoryBanks
    optimizer: AdamW
    rng: np.random.Generator
    iteration: int = 0
    total_steps: int = 0  # cosine schedule horizon


@dataclass
class Selections:
    """Discrete choices made during a forward pass; reused to freeze them."""

    neighbors: Dict[str, Optional[np.ndarray]] = field(default_factory=dict)
    positives: Optional[np.ndarray] = None
    negatives: Optional[np.ndarray] = None


@dataclass
class ObjectiveResult:
    report: LossReport
    grads: Grads
    selections: Selections
    teacher_img: np.ndarray
    teacher_txt: np.ndarray
    student_src_img: np.ndarray
    student_src_txt: np.ndarray
    graphs: Dict[str, CrossDomainGraph] = field(default_factory=dict)


def new_state(student: ParamSet, train: TrainConfig, memory: MemoryConfig, embed_dim: int) -> TrainState:
    return TrainState(
        pair=TeacherStudentPair.from_student(student, train.momentum),
        banks=MemoryBanks(memory.capacity, embed_dim),
        optimizer=AdamW(train.lr, train.beta1, train.beta2, train.eps, train.weight_decay),
        rng=np.random.default_rng([train.seed, 7]),
    )


def _check_unlabeled(batch: Sequence[Sample], modality: str) -> None:
    for s in batch:
        if s.domain != "target" or s.modality != modality:
            raise UsageError(f"target {modality} batch holds a {s.domain}/{s.modality} sample")
        if s.identity is not None:
            raise UsageError("target batches must be unlabeled")


def _propagate(student_feats: FeatureBatch, src: Optional[np.ndarray], tgt: Optional[np.ndarray],
               params: ParamSet, k: int, frozen: Optional[np.ndarray]):
    dim = student_feats.features.shape[1]
    src = src if src is not None else np.zeros((0, dim))
    tgt = tgt if tgt is not None else np.zeros((0, dim))
    if len(student_feats) + src.shape[0] + tgt.shape[0] < 2:
        # A lone vertex has nothing to aggregate; pass it through
        return None, None, None, student_feats
    if frozen is None:
        graph = build_graph(student_feats, src, tgt, k)
    else:
        graph = CrossDomainGraph(np.concatenate([student_feats.features, src, tgt], axis=0), frozen,
                                 len(student_feats), src.shape[0], tgt.shape[0])
    layers = gnn_layers(params)
    out, cache = gnn_forward_cached(graph, layers)
    return graph, layers, cache, extract_domain_aware(out, len(student_feats), student_feats)


def objective(student: ParamSet, teacher: ParamSet, banks: MemoryBanks, source_batch: Sequence[SourcePair],
              target_img_batch: Sequence[Sample], target_txt_batch: Sequence[Sample], setup: AdaptSetup,
              frozen: Optional[Selections] = None) -> ObjectiveResult:
    """Total adaptation loss and its gradient w.r.t. every student parameter.

    Memory snapshots and teacher outputs are constants. Passing ``frozen``
    reuses the graph neighbors and matching pairs of an earlier pass.
    """
    cfg = setup.loss
    min_fill = setup.memory.effective_min_fill
    raw_ti = stack_raw(target_img_batch)
    raw_tt = stack_raw(target_txt_batch)
    if source_batch:
        raw_si = stack_raw([p[0] for p in source_batch])
        raw_st = stack_raw([p[1] for p in source_batch])
    else:
        raw_si = np.zeros((0, raw_ti.shape[1]))
        raw_st = np.zeros((0, raw_tt.shape[1]))

    # (1) teacher features and (2) pseudo targets
    hat_ti = FeatureBatch(encode(teacher, "image", raw_ti)[0], "target", "image", "teacher", "f_hat_TI")
    hat_tt = FeatureBatch(encode(teacher, "text", raw_tt)[0], "target", "text", "teacher", "f_hat_TT")
    queues = {name: banks.ready_snapshot(name, min_fill) for name in ("SI", "ST", "TI", "TT")}
    targets = pseudo_targets(hat_ti, hat_tt, queues["TT"], queues["TI"], cfg.tau, cfg.delta, cfg.distill_alpha)

    # (3) student features
    f_si, cache_si = encode(student, "image", raw_si)
    f_st, cache_st = encode(student, "text", raw_st)
    f_ti_raw, cache_ti = encode(student, "image", raw_ti)
    f_tt_raw, cache_tt = encode(student, "text", raw_tt)
    f_ti = FeatureBatch(f_ti_raw, "target", "image", "student", "f_TI")
    f_tt = FeatureBatch(f_tt_raw, "target", "text", "student", "f_TT")

    # (4) graph propagation
    selections = Selections()
    propagated = {}
    if setup.use_graph:
        for modality, batch, src, tgt in (("image", f_ti, queues["SI"], queues["TI"]),
                                          ("text", f_tt, queues["ST"], queues["TT"])):
            fixed = frozen.neighbors.get(modality) if frozen is not None else None
            propagated[modality] = _propagate(batch, src, tgt, student, setup.graph.k, fixed)
            graph = propagated[modality][0]
            selections.neighbors[modality] = graph.neighbors if graph is not None else None
        f_ti = propagated["image"][3]
        f_tt = propagated["text"][3]

    # (5) matching pairs
    if frozen is not None:
        positives, negatives = frozen.positives, frozen.negatives
    else:
        positives = select_positives(hat_ti.features, queues["TT"], cfg.delta)
        negatives = mine_hard_negatives(f_ti.features, f_st)
    selections.positives, selections.negatives = positives, negatives

    # (6) losses
    itc = cd_itc(f_ti, f_tt, targets, queues["TT"], queues["TI"], cfg)
    itm = cd_itm(positives, negatives, MatchingHead.from_params(student), f_ti.features, queues["TT"], f_st)
    aux_value, aux_grad_si, aux_grad_st = None, None, None
    if cfg.aux == "source_itc" and len(source_batch) > 0:
        aux_value, aux_grad_si, aux_grad_st = in_batch_contrastive(f_si, f_st, cfg.tau)
    report = LossReport(n_positive=itm.n_positive, n_negative=itm.n_negative, n_skipped=itm.n_skipped)
    report.skipped.extend(itc.skipped)
    total(itc.value, itm.value, aux_value, cfg, report)

    # Backward: loss -> features -> graph -> encoders
    grads = student.zeros_like()
    for name, g in itm.grads.items():
        grads[name] += cfg.lambda2 * g
    grad_ti = cfg.lambda1 * itc.grad_img + cfg.lambda2 * itm.grad_img
    grad_tt = cfg.lambda1 * itc.grad_txt
    grad_st = cfg.lambda2 * itm.grad_source_txt
    grad_si = np.zeros_like(f_si)
    if aux_value is not None:
        grad_si += cfg.lambda3 * aux_grad_si
        grad_st += cfg.lambda3 * aux_grad_st

    if setup.use_graph:
        raw_grads = {}
        for modality, grad_feats in (("image", grad_ti), ("text", grad_tt)):
            graph, layers, cache, _ = propagated[modality]
            if graph is None:
                raw_grads[modality] = grad_feats
                continue
            grad_out = np.zeros_like(graph.X)
            grad_out[:graph.num_input] = grad_feats
            layer_grads, grad_x = gnn_backward(layers, graph, cache, grad_out)
            for i, (g_w, g_b) in enumerate(layer_grads):
                w_name, b_name = gnn_layer_names(i)
                grads[w_name] += g_w
                grads[b_name] += g_b
            # Memory rows are constants
            raw_grads[modality] = grad_x[:graph.num_input]
        grad_ti, grad_tt = raw_grads["image"], raw_grads["text"]

    for modality, cache, grad_feats in (("image", cache_ti, grad_ti), ("text", cache_tt, grad_tt),
                                        ("image", cache_si, grad_si), ("text", cache_st, grad_st)):
        if grad_feats.shape[0] == 0:
            continue
        for name, g in encode_backward(student, modality, cache, grad_feats).items():
            grads[name] += g

    return ObjectiveResult(
        report=report,
        grads=grads,
        selections=selections,
        teacher_img=hat_ti.features,
        teacher_txt=hat_tt.features,
        student_src_img=f_si,
        student_src_txt=f_st,
        graphs={m: p[0] for m, p in propagated.items() if p[0] is not None},
    )


def adapt_step(state: TrainState, source_batch: Sequence[SourcePair], target_img_batch: Sequence[Sample],
               target_txt_batch: Sequence[Sample], setup: AdaptSetup) -> Tuple[TrainState, LossReport]:
    """One GCKD iteration on unlabeled target batches plus a source pair batch."""
    _check_unlabeled(target_img_batch, "image")
    _check_unlabeled(target_txt_batch, "text")
    if not target_img_batch or not target_txt_batch:
        raise UsageError("adaptation needs non-empty target image and text batches")
    pair = state.pair
    result = objective(pair.student, pair.teacher, state.banks, source_batch, target_img_batch,
                       target_txt_batch, setup)

    # (7) student update
    if setup.train.clip_norm > 0:
        clip_by_global_norm(result.grads, setup.train.clip_norm)
    lr = cosine_lr(setup.train.lr, state.iteration, state.total_steps)
    state.optimizer.step(pair.student, result.grads, lr)

    # (8) EMA teacher
    ema_update(pair)

    # (9) queue pushes
    it = state.iteration
    state.banks["TI"].push_batch(FeatureBatch(result.teacher_img, "target", "image", "teacher", "f_hat_TI"), it)
    state.banks["TT"].push_batch(FeatureBatch(result.teacher_txt, "target", "text", "teacher", "f_hat_TT"), it)
    if len(source_batch):
        state.banks["SI"].push_batch(FeatureBatch(result.student_src_img, "source", "image", "student", "f_SI"), it)
        state.banks["ST"].push_batch(FeatureBatch(result.student_src_txt, "source", "text", "student", "f_ST"), it)

    if setup.dump_dir is not None:
        for modality, graph in result.graphs.items():
            dump_edges(graph, Path(setup.dump_dir) / f"iter_{it:06d}_{modality}.txt")

    state.iteration += 1
    for name in result.report.skipped:
        logger.debug(f"iteration {it}: {name} skipped")
    return state, result.report


def warmup(state: TrainState, source_pairs: Sequence[SourcePair], setup: AdaptSetup,
           on_epoch: Optional[Callable[[int, float], None]] = None) -> TrainState:
    """Symmetric in-batch contrastive training of the student encoders on source pairs.

    The teacher is reset to a copy of the student at the end.
    """
    train = setup.train
    student = state.pair.student
    optimizer = AdamW(train.warmup_lr, train.beta1, train.beta2, train.eps, train.weight_decay)
    steps_per_epoch = -(-len(source_pairs) // train.warmup_batch_size) if source_pairs else 0
    total_steps = steps_per_epoch * train.warmup_epochs
    step = 0
    for epoch in range(train.warmup_epochs):
        losses = []
        for batch in batch_iter(source_pairs, train.warmup_batch_size, int(state.rng.integers(2 ** 63))):
            raw_i = stack_raw([p[0] for p in batch])
            raw_t = stack_raw([p[1] for p in batch])
            f_i, cache_i = encode(student, "image", raw_i)
            f_t, cache_t = encode(student, "text", raw_t)
            value, grad_i, grad_t = in_batch_contrastive(f_i, f_t, setup.loss.tau)
            grads = encode_backward(student, "image", cache_i, grad_i)
            grads.update(encode_backward(student, "text", cache_t, grad_t))
            optimizer.step(student, grads, cosine_lr(train.warmup_lr, step, total_steps))
            losses.append(value)
            step += 1
        mean_loss = float(np.mean(losses)) if losses else 0.0
        logger.info(f"warm-up epoch {epoch + 1}/{train.warmup_epochs}: contrastive loss {mean_loss:.4f}")
        if on_epoch is not None:
            on_epoch(epoch, mean_loss)
    state.pair.teacher = clone_params(student)
    return state


def steps_per_epoch(num_target_images: int, num_target_texts: int, batch_size: int) -> int:
    return -(-min(num_target_images, num_target_texts) // batch_size)


def adapt(state: TrainState, source_pairs: Sequence[SourcePair], target_images: Sequence[Sample],
          target_texts: Sequence[Sample], setup: AdaptSetup,
          on_step: Optional[Callable[[int, int, LossReport], None]] = None) -> TrainState:
    """Run ``setup.train.epochs`` adaptation epochs over the target set.

    Source and target batches come from independent shuffled iterators;
    the source iterator restarts whenever it runs out.
    """
    train = setup.train
    per_epoch = steps_per_epoch(len(target_images), len(target_texts), train.batch_size)
    state.total_steps = per_epoch * train.epochs

    def source_batches():
        while True:
            batches = batch_iter(source_pairs, train.batch_size, int(state.rng.integers(2 ** 63)))
            empty = True
            for batch in batches:
                empty = False
                yield batch
            if empty:
                yield []

    sources = source_batches()
    for epoch in range(train.epochs):
        image_batches = batch_iter(target_images, train.batch_size, int(state.rng.integers(2 ** 63)))
        text_batches = batch_iter(target_texts, train.batch_size, int(state.rng.integers(2 ** 63)))
        totals: List[float] = []
        for img_batch, txt_batch in zip(image_batches, text_batches):
            state, report = adapt_step(state, next(sources), img_batch, txt_batch, setup)
            totals.append(report.total)
            if on_step is not None:
                on_step(epoch, state.iteration, report)
        logger.info(f"adaptation epoch {epoch + 1}/{train.epochs}: mean total loss "
                    f"{float(np.mean(totals)) if totals else 0.0:.4f} over {len(totals)} steps")
    return state
