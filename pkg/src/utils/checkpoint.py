"""Binary containers for operators and resumable model checkpoints.

Layout (little endian): a fixed header, then row-major float64 K x K
matrices. Operator files hold one matrix (K). Checkpoints hold G_hat,
G_hat_inv and A followed by the frozen dictionary (a small header and the
RBF centers), so a checkpoint alone is enough to resume or analyze a run.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from src.model.koopman_model import KoopmanModel
from src.model.lifting import Dictionary
from src.utils.errors import ArtifactFormatError

log = logging.getLogger(__name__)
log.addHandler(logging.NullHandler())

MAGIC = b"RREDMD\x00\x01"
FORMAT_VERSION = 1
KIND_OPERATOR = 1
KIND_CHECKPOINT = 2

HEADER = np.dtype(
    [
        ("magic", "S8"),
        ("version", "<u4"),
        ("kind", "<u4"),
        ("k_dim", "<u8"),
        ("lam", "<f8"),
        ("M", "<u8"),
        ("refresh_period", "<u8"),
        ("position", "<u8"),
    ]
)
DICT_HEADER = np.dtype(
    [
        ("state_dim", "<u8"),
        ("include_constant", "<u8"),
        ("include_identity", "<u8"),
        ("num_rbf", "<u8"),
        ("bandwidth", "<f8"),
    ]
)
MATRIX = np.dtype("<f8")


@dataclass(frozen=True, eq=False)
class OperatorArtifact:
    K: np.ndarray
    lam: float
    M: int


@dataclass(frozen=True, eq=False)
class Checkpoint:
    model: KoopmanModel
    dictionary: Dictionary
    position: int = 0  # source items consumed when the checkpoint was taken

    def operator_artifact(self) -> OperatorArtifact:
        return OperatorArtifact(K=self.model.operator(), lam=self.model.lam, M=self.model.M)


def _header(kind: int, k_dim: int, lam: float, M: int, refresh_period: int = 0, position: int = 0) -> bytes:
    header = np.zeros(1, dtype=HEADER)
    header[0] = (MAGIC, FORMAT_VERSION, kind, k_dim, lam, M, refresh_period, position)
    return header.tobytes()


def _matrix_bytes(matrix: np.ndarray) -> bytes:
    return np.ascontiguousarray(matrix, dtype=MATRIX).tobytes()


def save_operator(path: str | Path, K: np.ndarray, lam: float, M: int) -> Path:
    """Write one operator matrix with its lambda and sample count."""
    path = Path(path)
    K = np.asarray(K, dtype=np.float64)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as f:
        f.write(_header(KIND_OPERATOR, K.shape[0], lam, M))
        f.write(_matrix_bytes(K))
    log.info("Operator (K=%d) written to %s", K.shape[0], path)
    return path


def save_checkpoint(path: str | Path, model: KoopmanModel, dictionary: Dictionary, position: Optional[int] = None) -> Path:
    """Write the full model state plus its dictionary."""
    if dictionary.total_dim != model.k_dim:
        raise ArtifactFormatError(f"dictionary has K={dictionary.total_dim}, model has K={model.k_dim}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dict_header = np.zeros(1, dtype=DICT_HEADER)
    dict_header[0] = (
        dictionary.state_dim,
        int(dictionary.include_constant),
        int(dictionary.include_identity),
        dictionary.num_rbf,
        dictionary.rbf_bandwidth,
    )
    position = model.M if position is None else position
    with path.open("wb") as f:
        f.write(_header(KIND_CHECKPOINT, model.k_dim, model.lam, model.M, model.refresh_period, position))
        for matrix in (model.G_hat, model.G_hat_inv, model.A):
            f.write(_matrix_bytes(matrix))
        f.write(dict_header.tobytes())
        f.write(_matrix_bytes(dictionary.rbf_centers))
    log.info("Checkpoint at M=%d written to %s", model.M, path)
    return path


class _Reader:
    def __init__(self, path: Path):
        self.path = path
        self.data = path.read_bytes()
        self.offset = 0

    def take(self, dtype: np.dtype, count: int) -> np.ndarray:
        size = dtype.itemsize * count
        if self.offset + size > len(self.data):
            raise ArtifactFormatError(f"{self.path}: truncated file ({len(self.data)} bytes)")
        out = np.frombuffer(self.data, dtype=dtype, count=count, offset=self.offset)
        self.offset += size
        return out

    def matrix(self, k_dim: int) -> np.ndarray:
        return self.take(MATRIX, k_dim * k_dim).reshape(k_dim, k_dim).astype(np.float64)

    def finish(self) -> None:
        if self.offset != len(self.data):
            raise ArtifactFormatError(f"{self.path}: {len(self.data) - self.offset} trailing bytes")


def _read_header(reader: _Reader, expected_kind: int) -> np.void:
    header = reader.take(HEADER, 1)[0]
    if bytes(header["magic"]) != MAGIC:
        raise ArtifactFormatError(f"{reader.path}: bad magic {bytes(header['magic'])!r}")
    if int(header["version"]) != FORMAT_VERSION:
        raise ArtifactFormatError(f"{reader.path}: unsupported format version {int(header['version'])}")
    if int(header["kind"]) != expected_kind:
        raise ArtifactFormatError(f"{reader.path}: container kind {int(header['kind'])}, expected {expected_kind}")
    if int(header["k_dim"]) < 1:
        raise ArtifactFormatError(f"{reader.path}: invalid dimension {int(header['k_dim'])}")
    return header


def load_operator(path: str | Path) -> OperatorArtifact:
    """Read an operator file; checkpoints are accepted too."""
    reader = _Reader(Path(path))
    kind = int(reader.take(HEADER, 1)[0]["kind"]) if len(reader.data) >= HEADER.itemsize else None
    reader.offset = 0
    if kind == KIND_CHECKPOINT:
        return load_checkpoint(path).operator_artifact()
    header = _read_header(reader, KIND_OPERATOR)
    K = reader.matrix(int(header["k_dim"]))
    reader.finish()
    return OperatorArtifact(K=K, lam=float(header["lam"]), M=int(header["M"]))


def load_checkpoint(path: str | Path) -> Checkpoint:
    reader = _Reader(Path(path))
    header = _read_header(reader, KIND_CHECKPOINT)
    k_dim = int(header["k_dim"])
    G_hat, G_hat_inv, A = (reader.matrix(k_dim) for _ in range(3))

    dict_header = reader.take(DICT_HEADER, 1)[0]
    state_dim = int(dict_header["state_dim"])
    num_rbf = int(dict_header["num_rbf"])
    centers = reader.take(MATRIX, num_rbf * state_dim).reshape(num_rbf, state_dim).astype(np.float64)
    reader.finish()

    try:
        dictionary = Dictionary(
            state_dim=state_dim,
            include_constant=bool(dict_header["include_constant"]),
            include_identity=bool(dict_header["include_identity"]),
            rbf_centers=centers,
            rbf_bandwidth=float(dict_header["bandwidth"]),
        )
        if dictionary.total_dim != k_dim:
            raise ArtifactFormatError(f"{path}: dictionary has K={dictionary.total_dim}, matrices have K={k_dim}")
        model = KoopmanModel.from_state(
            lam=float(header["lam"]),
            refresh_period=int(header["refresh_period"]),
            M=int(header["M"]),
            G_hat=G_hat,
            G_hat_inv=G_hat_inv,
            A=A,
        )
    except ArtifactFormatError:
        raise
    except ValueError as exc:
        raise ArtifactFormatError(f"{path}: {exc}") from exc
    log.info("Checkpoint at M=%d loaded from %s", model.M, path)
    return Checkpoint(model=model, dictionary=dictionary, position=int(header["position"]))
