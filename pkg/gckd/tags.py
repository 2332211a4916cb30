"""Modality, domain and feature-role tags."""
from typing import Dict, Literal, Tuple

Modality = Literal["image", "text"]
Domain = Literal["source", "target"]
Provenance = Literal["student", "teacher"]
Role = Literal["f_SI", "f_ST", "f_TI", "f_TT", "f_hat_TI", "f_hat_TT"]

MODALITIES: Tuple[Modality, ...] = ("image", "text")
DOMAINS: Tuple[Domain, ...] = ("source", "target")

ROLE_TAGS: Dict[str, Tuple[Domain, Modality]] = {
    "f_SI": ("source", "image"),
    "f_ST": ("source", "text"),
    "f_TI": ("target", "image"),
    "f_TT": ("target", "text"),
    "f_hat_TI": ("target", "image"),
    "f_hat_TT": ("target", "text"),
}

# Roles produced by the teacher encoder
TEACHER_ROLES = ("f_hat_TI", "f_hat_TT")


def role_for(domain: Domain, modality: Modality, provenance: Provenance = "student") -> str:
    prefix = "f_hat_" if provenance == "teacher" else "f_"
    return f"{prefix}{domain[0].upper()}{modality[0].upper()}"
