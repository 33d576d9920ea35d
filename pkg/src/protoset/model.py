"""Full model container: encoder plus prototype head, with checkpoint I/O.

Checkpoints are .npz-compatible zip archives written with a fixed timestamp so
identical runs produce bit-identical files (numpy's own savez stamps wall-clock
time into the zip directory).
"""

from __future__ import annotations

import io
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoder import EncoderParams, encode_forward
from .errors import FormatError
from .prototypes import (
    PrototypeAssignment,
    PrototypeParams,
    init_prototypes,
    predict_assignment,
    reconstruct_forward,
)


@dataclass(eq=False)
class Model:
    encoder: EncoderParams
    proto: PrototypeParams
    beta: float = 10.0
    eps_mass: float = 0.5


def init_model(
    d_in: int,
    hidden: int,
    d: int,
    k: int,
    rng: np.random.Generator,
    std: float = 1e-3,
    alpha: float = 0.25,
    beta: float = 10.0,
    eps_mass: float = 0.5,
) -> Model:
    """Random model with the default two-layer encoder d_in -> hidden -> d."""
    from .encoder import init_encoder

    enc = init_encoder([d_in, hidden, d], rng, std=std, alpha=alpha)
    proto = init_prototypes(d, k, rng, std=std)
    return Model(enc, proto, beta=beta, eps_mass=eps_mass)


def named_tensors(model: Model) -> dict[str, np.ndarray]:
    """Live views of every trainable tensor, keyed stably for optimizers."""
    out: dict[str, np.ndarray] = {}
    for i, (w, b) in enumerate(zip(model.encoder.weights, model.encoder.biases)):
        out[f"enc_w{i}"] = w
        out[f"enc_b{i}"] = b
    out["predictor"] = model.proto.predictor
    out["transform"] = model.proto.transform
    out["gate_logits"] = model.proto.gate_logits
    return out


@dataclass(eq=False)
class SetForward:
    """Forward pass artifacts for one media set."""

    feats: np.ndarray
    assign: PrototypeAssignment
    fhat: np.ndarray
    enc_cache: list[np.ndarray]
    recon_cache: dict


def set_forward(model: Model, x: np.ndarray) -> SetForward:
    """Encode raw media vectors and reconstruct prototype-gated unit features."""
    feats, enc_cache = encode_forward(model.encoder, x)
    assign = predict_assignment(model.proto, feats)
    fhat, recon_cache = reconstruct_forward(model.proto, feats, assign.norm)
    return SetForward(feats, assign, fhat, enc_cache, recon_cache)


def save_checkpoint(model: Model, path: str | Path) -> None:
    """Write all tensors plus scalar metadata; bit-identical across runs."""
    entries: dict[str, np.ndarray] = dict(named_tensors(model))
    entries["meta"] = np.array(
        [float(len(model.encoder.weights)), model.encoder.alpha, model.beta, model.eps_mass]
    )
    with zipfile.ZipFile(Path(path), "w", zipfile.ZIP_STORED) as zf:
        for name in sorted(entries):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(entries[name]))
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, buf.getvalue())


def load_checkpoint(path: str | Path) -> Model:
    path = Path(path)
    try:
        archive = np.load(path)
    except (OSError, ValueError) as exc:
        raise FormatError(f"{path}: not a readable checkpoint: {exc}") from None
    with archive:
        names = set(archive.files)
        if "meta" not in names:
            raise FormatError(f"{path}: missing meta entry")
        meta = archive["meta"]
        if meta.shape != (4,):
            raise FormatError(f"{path}: bad meta entry shape {meta.shape}")
        n_layers = int(meta[0])
        needed = {f"enc_w{i}" for i in range(n_layers)}
        needed |= {f"enc_b{i}" for i in range(n_layers)}
        needed |= {"predictor", "transform", "gate_logits"}
        missing = needed - names
        if missing:
            raise FormatError(f"{path}: missing tensors {sorted(missing)}")
        enc = EncoderParams(
            weights=[archive[f"enc_w{i}"] for i in range(n_layers)],
            biases=[archive[f"enc_b{i}"] for i in range(n_layers)],
            alpha=float(meta[1]),
        )
        proto = PrototypeParams(
            predictor=archive["predictor"],
            transform=archive["transform"],
            gate_logits=archive["gate_logits"],
        )
        return Model(enc, proto, beta=float(meta[2]), eps_mass=float(meta[3]))
