"""Dataset ingestion and generation.

Provides the IDX digit-file reader, the noisy two-view digit construction
(rotated view 1, noisy same-class partner as view 2), synthetic Gaussian
two-view data with analytically known canonical correlations, a nonlinear
two-view generator for kernel/deep experiments, and a versioned binary
container for generated datasets.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagicError,
    DimensionMismatchError,
    InfeasibleSpecError,
    LabelClassEmptyError,
    ShapeMismatchError,
    TruncatedFileError,
)
from .numerics import as_matrix

SPLIT_TRAIN, SPLIT_TUNE, SPLIT_TEST = 0, 1, 2
_SPLIT_NAMES = {"train": SPLIT_TRAIN, "tune": SPLIT_TUNE, "test": SPLIT_TEST}


@dataclass
class MultiViewDataset:
    """Paired view matrices with per-sample split tags and optional labels."""

    view1: np.ndarray           # (dx, N)
    view2: np.ndarray           # (dy, N)
    split: np.ndarray           # (N,) uint8 in {0 train, 1 tune, 2 test}
    labels: np.ndarray | None = None  # (N,) int
    seed: int | None = None

    def __post_init__(self):
        self.view1 = as_matrix(self.view1, "view1")
        self.view2 = as_matrix(self.view2, "view2")
        n = self.view1.shape[1]
        if self.view2.shape[1] != n:
            raise ShapeMismatchError("views have different sample counts")
        self.split = np.asarray(self.split, dtype=np.uint8)
        if self.split.shape != (n,):
            raise ShapeMismatchError("split tags must be one per sample")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (n,):
                raise ShapeMismatchError("labels must be one per sample")

    @property
    def n_samples(self) -> int:
        return self.view1.shape[1]

    def indices(self, split: str) -> np.ndarray:
        return np.flatnonzero(self.split == _SPLIT_NAMES[split])

    def views(self, split: str) -> tuple[np.ndarray, np.ndarray]:
        idx = self.indices(split)
        return self.view1[:, idx], self.view2[:, idx]

    def split_labels(self, split: str) -> np.ndarray:
        if self.labels is None:
            raise ValueError("dataset has no labels")
        return self.labels[self.indices(split)]


def make_split_tags(n_train: int, n_tune: int, n_test: int) -> np.ndarray:
    return np.concatenate([
        np.full(n_train, SPLIT_TRAIN, dtype=np.uint8),
        np.full(n_tune, SPLIT_TUNE, dtype=np.uint8),
        np.full(n_test, SPLIT_TEST, dtype=np.uint8),
    ])


# --- IDX files ------------------------------------------------------------

_IDX_IMAGES_MAGIC = 0x00000803
_IDX_LABELS_MAGIC = 0x00000801


def read_idx(path) -> np.ndarray:
    """Read an IDX file of unsigned bytes.

    Image files (magic 0x00000803) come back as a (rows*cols, N) float64
    matrix rescaled to [0, 1]; label files (magic 0x00000801) as an (N,)
    int64 vector.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4:
        raise TruncatedFileError(f"{path}: too short for a magic number")
    magic = struct.unpack(">I", data[:4])[0]
    if magic == _IDX_LABELS_MAGIC:
        ndim = 1
    elif magic == _IDX_IMAGES_MAGIC:
        ndim = 3
    else:
        raise BadMagicError(f"{path}: unexpected magic 0x{magic:08x}")
    header = 4 + 4 * ndim
    if len(data) < header:
        raise TruncatedFileError(f"{path}: truncated dimension header")
    dims = struct.unpack(f">{ndim}I", data[4:header])
    count = int(np.prod(dims))
    if len(data) < header + count:
        raise TruncatedFileError(
            f"{path}: payload has {len(data) - header} bytes, expected {count}"
        )
    if len(data) > header + count:
        raise DimensionMismatchError(
            f"{path}: {len(data) - header - count} trailing bytes"
        )
    payload = np.frombuffer(data, dtype=np.uint8, offset=header)
    if ndim == 1:
        return payload.astype(np.int64)
    n, rows, cols = dims
    images = payload.reshape(n, rows * cols).T.astype(np.float64) / 255.0
    return images


def load_idx_pair(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """Read matching image and label files, checking sample counts."""
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 2 or labels.ndim != 1:
        raise DimensionMismatchError("expected one images file and one labels file")
    if images.shape[1] != labels.shape[0]:
        raise DimensionMismatchError(
            f"{images.shape[1]} images but {labels.shape[0]} labels"
        )
    return images, labels


# --- image rotation -------------------------------------------------------

def rotate_image(image: np.ndarray, angle: float) -> np.ndarray:
    """Rotate a 2-D image about its center by ``angle`` radians.

    Bilinear interpolation with zero padding; the center is the pixel-grid
    midpoint ((h-1)/2, (w-1)/2).
    """
    h, w = image.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    dy = rows - cy
    dx = cols - cx
    cos_a, sin_a = np.cos(angle), np.sin(angle)
    # Inverse mapping: source coordinates for each target pixel.
    src_y = cy + cos_a * dy + sin_a * dx
    src_x = cx - sin_a * dy + cos_a * dx
    y0 = np.floor(src_y).astype(np.int64)
    x0 = np.floor(src_x).astype(np.int64)
    wy = src_y - y0
    wx = src_x - x0
    out = np.zeros_like(image, dtype=np.float64)
    for oy, ox, weight in (
        (0, 0, (1 - wy) * (1 - wx)),
        (0, 1, (1 - wy) * wx),
        (1, 0, wy * (1 - wx)),
        (1, 1, wy * wx),
    ):
        yy = y0 + oy
        xx = x0 + ox
        valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        out[valid] += weight[valid] * image[yy[valid], xx[valid]]
    return out


def _rotate_flat(flat: np.ndarray, side: int, angle: float) -> np.ndarray:
    return rotate_image(flat.reshape(side, side), angle).ravel()


# --- noisy two-view digits -------------------------------------------------

def make_noisy_mnist(
    images,
    labels,
    seed,
    n_tune: int | None = None,
    test_images=None,
    test_labels=None,
    exclude_self: bool = False,
    return_angles: bool = False,
):
    """Build the noisy two-view digit dataset.

    View 1 is each image rotated by an angle drawn uniformly from
    [-pi/4, pi/4]; view 2 is a uniformly chosen same-class image with
    per-pixel uniform [0, 1] noise added and values clipped back to
    [0, 1]. The provided pool is permuted and split into train/tune
    (tune defaults to a sixth of the pool); a separate test pool may be
    supplied and is transformed the same way using its own partners.
    """
    images = as_matrix(images, "images")
    labels = np.asarray(labels, dtype=np.int64)
    if images.shape[1] != labels.shape[0]:
        raise DimensionMismatchError("image and label counts differ")
    side = int(round(np.sqrt(images.shape[0])))
    if side * side != images.shape[0]:
        raise DimensionMismatchError("images must be square")
    rng = np.random.default_rng(seed)
    n = images.shape[1]
    if n_tune is None:
        n_tune = n // 6
    if n_tune >= n:
        raise ValueError("tune split must leave at least one training sample")

    order = rng.permutation(n)
    pools = [(images[:, order], labels[order])]
    if test_images is not None:
        test_images = as_matrix(test_images, "test images")
        test_labels = np.asarray(test_labels, dtype=np.int64)
        if test_images.shape[1] != test_labels.shape[0]:
            raise DimensionMismatchError("test image and label counts differ")
        pools.append((test_images, test_labels))

    view1_parts, view2_parts, label_parts, angle_parts = [], [], [], []
    for pool_images, pool_labels in pools:
        m = pool_images.shape[1]
        by_class = {c: np.flatnonzero(pool_labels == c) for c in np.unique(pool_labels)}
        angles = rng.uniform(-np.pi / 4, np.pi / 4, size=m)
        view1 = np.empty_like(pool_images)
        for i in range(m):
            view1[:, i] = _rotate_flat(pool_images[:, i], side, angles[i])
        partners = np.empty(m, dtype=np.int64)
        for i in range(m):
            candidates = by_class[pool_labels[i]]
            if exclude_self:
                candidates = candidates[candidates != i]
                if candidates.size == 0:
                    raise LabelClassEmptyError(
                        f"class {pool_labels[i]} has no partner candidates"
                    )
            partners[i] = candidates[rng.integers(candidates.size)]
        noise = rng.uniform(0.0, 1.0, size=(pool_images.shape[0], m))
        view2 = np.clip(pool_images[:, partners] + noise, 0.0, 1.0)
        view1_parts.append(view1)
        view2_parts.append(view2)
        label_parts.append(pool_labels)
        angle_parts.append(angles)

    n_pool = pools[0][0].shape[1]
    n_test = pools[1][0].shape[1] if len(pools) > 1 else 0
    split = make_split_tags(n_pool - n_tune, n_tune, n_test)
    dataset = MultiViewDataset(
        view1=np.concatenate(view1_parts, axis=1),
        view2=np.concatenate(view2_parts, axis=1),
        split=split,
        labels=np.concatenate(label_parts),
        seed=seed if isinstance(seed, int) else None,
    )
    if return_angles:
        return dataset, np.concatenate(angle_parts)
    return dataset


# --- rendered digit corpus --------------------------------------------------

_FONT_FILES = (
    "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf",
    "/usr/share/fonts/truetype/dejavu/DejaVuSans-Bold.ttf",
    "/usr/share/fonts/truetype/dejavu/DejaVuSerif.ttf",
    "/usr/share/fonts/truetype/dejavu/DejaVuSerif-Bold.ttf",
    "/usr/share/fonts/truetype/dejavu/DejaVuSansMono.ttf",
    "/usr/share/fonts/truetype/dejavu/DejaVuSansMono-Bold.ttf",
)


def render_digit_corpus(n: int, seed, side: int = 28) -> tuple[np.ndarray, np.ndarray]:
    """Render a corpus of jittered digit images as a stand-in for IDX data.

    Each sample draws a digit class, font face, size, shear, and offset,
    so classes carry substantial style variation. Returns (images, labels)
    with images of shape (side*side, n) in [0, 1].
    """
    from PIL import Image, ImageDraw, ImageFont

    rng = np.random.default_rng(seed)
    fonts = {}
    images = np.empty((side * side, n), dtype=np.float64)
    labels = rng.integers(0, 10, size=n)
    for i in range(n):
        digit = int(labels[i])
        face = _FONT_FILES[rng.integers(len(_FONT_FILES))]
        size = int(rng.integers(17, 26))
        key = (face, size)
        if key not in fonts:
            fonts[key] = ImageFont.truetype(face, size)
        font = fonts[key]
        canvas = Image.new("L", (side * 2, side * 2), 0)
        draw = ImageDraw.Draw(canvas)
        draw.text((side, side), str(digit), fill=255, font=font, anchor="mm")
        shear = rng.uniform(-0.25, 0.25)
        canvas = canvas.transform(
            canvas.size,
            Image.Transform.AFFINE,
            (1.0, shear, -shear * side, 0.0, 1.0, 0.0),
            resample=Image.Resampling.BILINEAR,
        )
        ox = int(rng.integers(-2, 3))
        oy = int(rng.integers(-2, 3))
        left = side // 2 + ox
        top = side // 2 + oy
        crop = canvas.crop((left, top, left + side, top + side))
        images[:, i] = np.asarray(crop, dtype=np.float64).ravel() / 255.0
    return images, labels


# --- synthetic Gaussian two-view data ---------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """Specification of a Gaussian two-view dataset with known correlations.

    The generator draws a shared latent z ~ N(0, I_k) and emits, per
    shared dimension i, x_i = l_i z_i + s_i e_i (same for y with its own
    noise), then rotates each view by a random orthogonal matrix. The
    per-view loading solves corr(x_i, z_i) = sqrt(rho_i), so the
    population canonical correlations are exactly ``rho``. Remaining
    dimensions are independent unit-variance noise.
    """

    rho: tuple[float, ...]
    dx: int
    dy: int
    n_train: int
    n_tune: int = 0
    n_test: int = 0
    noise_x: float = 1.0
    noise_y: float = 1.0
    seed: int = 0

    @property
    def latent_dim(self) -> int:
        return len(self.rho)

    def __post_init__(self):
        rho = tuple(float(r) for r in self.rho)
        if any(r < 0 or r > 1 for r in rho):
            raise InfeasibleSpecError("correlations must lie in [0, 1]")
        if any(a < b for a, b in zip(rho, rho[1:])):
            raise InfeasibleSpecError("correlations must be nonincreasing")
        if min(self.dx, self.dy) < len(rho):
            raise InfeasibleSpecError("view dimensions must cover the latent")
        if self.noise_x < 0 or self.noise_y < 0:
            raise InfeasibleSpecError("noise levels must be nonnegative")
        for r, s in ((r, s) for r in rho for s in (self.noise_x, self.noise_y)):
            if r == 1.0 and s > 0:
                raise InfeasibleSpecError(
                    "a unit correlation requires zero noise on both views"
                )
        if self.n_train + self.n_tune + self.n_test < 1:
            raise InfeasibleSpecError("need at least one sample")
        object.__setattr__(self, "rho", rho)


def _loadings(rho: tuple, noise: float) -> np.ndarray:
    # corr(x_i, z_i) = c_i = sqrt(rho_i)  =>  l_i = s c_i / sqrt(1 - c_i^2).
    out = np.empty(len(rho))
    for i, r in enumerate(rho):
        c = np.sqrt(r)
        if r == 1.0:
            out[i] = 1.0
        elif r == 0.0:
            out[i] = 0.0
        else:
            out[i] = noise * c / np.sqrt(1.0 - c * c)
    return out


def _random_orthogonal(dim: int, rng) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q * np.sign(np.diag(r))


def synthetic_population_covariances(spec: SyntheticSpec):
    """Population (Sxx, Syy, Sxy) implied by the generator, pre-rotation."""
    k = spec.latent_dim
    lx = _loadings(spec.rho, spec.noise_x)
    ly = _loadings(spec.rho, spec.noise_y)
    sx = np.where(np.asarray(spec.rho) == 1.0, 0.0, spec.noise_x)
    sy = np.where(np.asarray(spec.rho) == 1.0, 0.0, spec.noise_y)
    sxx = np.eye(spec.dx)
    syy = np.eye(spec.dy)
    sxx[:k, :k] = np.diag(lx**2 + sx**2)
    syy[:k, :k] = np.diag(ly**2 + sy**2)
    sxy = np.zeros((spec.dx, spec.dy))
    sxy[:k, :k] = np.diag(lx * ly)
    return sxx, syy, sxy


def make_synthetic_gaussian(spec: SyntheticSpec) -> MultiViewDataset:
    """Sample a two-view Gaussian dataset with known canonical correlations."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n_train + spec.n_tune + spec.n_test
    k = spec.latent_dim
    z = rng.standard_normal((k, n))
    lx = _loadings(spec.rho, spec.noise_x)
    ly = _loadings(spec.rho, spec.noise_y)
    x = rng.standard_normal((spec.dx, n))
    y = rng.standard_normal((spec.dy, n))
    x[:k] = lx[:, None] * z + spec.noise_x * x[:k]
    y[:k] = ly[:, None] * z + spec.noise_y * y[:k]
    for i, r in enumerate(spec.rho):
        if r == 1.0:
            x[i] = z[i]
            y[i] = z[i]
    qx = _random_orthogonal(spec.dx, rng)
    qy = _random_orthogonal(spec.dy, rng)
    return MultiViewDataset(
        view1=qx @ x,
        view2=qy @ y,
        split=make_split_tags(spec.n_train, spec.n_tune, spec.n_test),
        labels=None,
        seed=spec.seed,
    )


# --- nonlinear two-view data -------------------------------------------------

def make_synthetic_nonlinear(
    n_train: int,
    n_tune: int = 0,
    n_test: int = 0,
    latent_dim: int = 2,
    noise: float = 0.1,
    ambient_dim: int | None = None,
    seed=0,
) -> MultiViewDataset:
    """Two views related only through even functions of a shared latent.

    View 1 carries the latent linearly (padded with independent latent
    noise); view 2 carries centered squares of the latent and of
    adjacent-latent sums. Linear CCA between the views is near zero by
    odd/even symmetry while nonlinear maps can recover strong correlation.
    Each view is embedded into ``ambient_dim`` dimensions (default 2 *
    latent_dim) through orthonormal loadings plus isotropic noise, so
    larger ambient dimensions place the data near a low-dimensional
    manifold.
    """
    rng = np.random.default_rng(seed)
    n = n_train + n_tune + n_test
    k = latent_dim
    if ambient_dim is None:
        ambient_dim = 2 * k
    if ambient_dim < 2 * k:
        raise ValueError("ambient_dim must be at least 2 * latent_dim")
    z = rng.standard_normal((k, n))
    x_core = np.concatenate([z, rng.standard_normal((k, n))], axis=0)
    squares = z * z - 1.0
    pair_sums = np.empty((k, n))
    for i in range(k):
        s = (z[i] + z[(i + 1) % k]) / np.sqrt(2.0)
        pair_sums[i] = s * s - 1.0
    y_core = np.concatenate([squares, pair_sums], axis=0)
    qx = _random_orthogonal(ambient_dim, rng)[:, : 2 * k]
    qy = _random_orthogonal(ambient_dim, rng)[:, : 2 * k]
    view1 = qx @ x_core + noise * rng.standard_normal((ambient_dim, n))
    view2 = qy @ y_core + noise * rng.standard_normal((ambient_dim, n))
    return MultiViewDataset(
        view1=view1,
        view2=view2,
        split=make_split_tags(n_train, n_tune, n_test),
        labels=None,
        seed=seed if isinstance(seed, int) else None,
    )


# --- binary dataset container ------------------------------------------------

_CONTAINER_MAGIC = b"MVDS"
_CONTAINER_VERSION = 1


def save_dataset(dataset: MultiViewDataset, path) -> None:
    """Write a dataset as a versioned little-endian binary container.

    Layout: magic, u32 version, u32 dx, u32 dy, u32 N, i64 seed,
    u8 has_labels, u8 split tags (N), i32 labels (N, if present), then the
    two view payloads as float32 row-major.
    """
    dx, n = dataset.view1.shape
    dy = dataset.view2.shape[0]
    has_labels = dataset.labels is not None
    seed = dataset.seed if dataset.seed is not None else -1
    with open(path, "wb") as fh:
        fh.write(_CONTAINER_MAGIC)
        fh.write(struct.pack("<IIIIqB", _CONTAINER_VERSION, dx, dy, n, seed, has_labels))
        fh.write(dataset.split.astype("<u1").tobytes())
        if has_labels:
            fh.write(dataset.labels.astype("<i4").tobytes())
        fh.write(dataset.view1.astype("<f4").tobytes())
        fh.write(dataset.view2.astype("<f4").tobytes())


def load_dataset(path) -> MultiViewDataset:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _CONTAINER_MAGIC:
        raise BadMagicError(f"{path}: not a dataset container")
    header_size = 4 + struct.calcsize("<IIIIqB")
    if len(data) < header_size:
        raise TruncatedFileError(f"{path}: truncated header")
    version, dx, dy, n, seed, has_labels = struct.unpack(
        "<IIIIqB", data[4:header_size]
    )
    if version != _CONTAINER_VERSION:
        raise BadMagicError(f"{path}: unsupported container version {version}")
    expected = header_size + n + (4 * n if has_labels else 0) + 4 * n * (dx + dy)
    if len(data) < expected:
        raise TruncatedFileError(f"{path}: expected {expected} bytes, got {len(data)}")
    offset = header_size
    split = np.frombuffer(data, dtype="<u1", count=n, offset=offset).copy()
    offset += n
    labels = None
    if has_labels:
        labels = np.frombuffer(data, dtype="<i4", count=n, offset=offset).astype(np.int64)
        offset += 4 * n
    view1 = np.frombuffer(data, dtype="<f4", count=dx * n, offset=offset)
    view1 = view1.reshape(dx, n).astype(np.float64)
    offset += 4 * dx * n
    view2 = np.frombuffer(data, dtype="<f4", count=dy * n, offset=offset)
    view2 = view2.reshape(dy, n).astype(np.float64)
    return MultiViewDataset(
        view1=view1, view2=view2, split=split, labels=labels,
        seed=None if seed < 0 else int(seed),
    )
