"""Dense linear-algebra and probability kernels.

Vectors and matrices are plain float64 numpy arrays. The single-vector
functions validate their input; the ``*_rows`` variants are the batched
forms used inside the training loop and assume already-validated arrays.
"""
import numpy as np

from gckd.errors import NumericDomainError, ShapeError
from gckd.utils.validation import ensure_positive, ensure_vector

Vector = np.ndarray
Matrix = np.ndarray


def cosine_sim(a: Vector, b: Vector) -> float:
    """Cosine similarity <a,b> / (|a| |b|), clipped to [-1, 1]."""
    a = ensure_vector(a, name="a")
    b = ensure_vector(b, name="b")
    if a.shape != b.shape:
        raise ShapeError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise NumericDomainError("cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def l2_normalize(a: Vector) -> Vector:
    a = ensure_vector(a, name="a")
    norm = np.linalg.norm(a)
    if norm == 0.0:
        raise NumericDomainError("cannot normalize a zero vector")
    return a / norm


def softmax_temp(logits: Vector, tau: float) -> Vector:
    """Softmax of ``logits / tau`` with max-subtraction."""
    tau = ensure_positive(tau, "tau")
    logits = ensure_vector(logits, name="logits")
    scaled = logits / tau
    scaled = scaled - np.max(scaled)
    e = np.exp(scaled)
    return e / np.sum(e)


def normalize_rows(x: Matrix) -> Matrix:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise NumericDomainError("cannot normalize a zero row")
    return x / norms


def normalize_rows_backward(y: Matrix, norms: Matrix, grad_y: Matrix) -> Matrix:
    """Gradient through y = x / |x| given the output rows and the input norms."""
    proj = np.sum(grad_y * y, axis=1, keepdims=True)
    return (grad_y - y * proj) / norms


def log_softmax_rows(logits: Matrix) -> Matrix:
    shifted = logits - np.max(logits, axis=1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))


def softmax_rows(logits: Matrix) -> Matrix:
    return np.exp(log_softmax_rows(logits))


def entropy_rows(p: Matrix) -> np.ndarray:
    # 0 log 0 = 0
    safe = np.where(p > 0.0, p, 1.0)
    return -np.sum(p * np.log(safe), axis=1)
