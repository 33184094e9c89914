"""Deterministic synthetic videos of moving, deforming, occluding shapes, and
Netpbm (P6/P5) file I/O for frames and indexed masks."""

import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ContractError, ParseError, SpecError

KINDS = ("disc", "rectangle", "blob")
BACKGROUNDS = ("flat", "gradient", "noise")


@dataclass
class ObjectSpec:
    kind: str
    center: tuple  # (y, x) at frame 0, pixels
    size: float  # radius (disc, blob) or half-width (rectangle)
    velocity: tuple = (0.0, 0.0)  # pixels per frame
    deform_amp: float = 0.0  # fractional amplitude of the size oscillation
    deform_period: float = 8.0  # frames
    color: tuple = (1.0, 0.0, 0.0)
    aspect: float = 1.0  # rectangle height / width
    lobes: int = 3  # blob only

    @property
    def label(self):
        return KINDS.index(self.kind)


@dataclass
class SceneSpec:
    seed: int
    num_objects: int = 2
    num_frames: int = 8
    image_size: int = 64
    background: str = "noise"
    color_drift: float = 0.01  # per-frame brightness drift of objects
    objects: list = field(default_factory=list)  # ObjectSpec; sampled from seed when empty

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["objects"] = [ObjectSpec(**{**o, "center": tuple(o["center"]), "velocity": tuple(o["velocity"]),
                                      "color": tuple(o["color"])}) for o in d.get("objects", [])]
        return cls(**d)


@dataclass
class SequenceRecord:
    frames: list  # float32 arrays, 3 x H x W in [0, 1]
    masks: list  # uint8 arrays, H x W, 0 = background, k = object k
    annotated: bool = True  # first mask is the given annotation
    labels: dict = field(default_factory=dict)  # object id -> class index
    spec: SceneSpec = None

    def __len__(self):
        return len(self.frames)

    @property
    def object_ids(self):
        return sorted(int(i) for i in np.unique(self.masks[0]) if i != 0) if self.masks else []


def random_objects(spec, rng):
    h = w = spec.image_size
    objs = []
    hues = (rng.uniform() + np.arange(spec.num_objects) / spec.num_objects) % 1.0
    for k in range(spec.num_objects):
        kind = KINDS[int(rng.integers(len(KINDS)))]
        size = float(rng.uniform(0.1, 0.17) * h)
        margin = size * 1.3
        objs.append(ObjectSpec(
            kind=kind,
            center=(float(rng.uniform(margin, h - margin)), float(rng.uniform(margin, w - margin))),
            size=size,
            velocity=(float(rng.uniform(-1.5, 1.5)), float(rng.uniform(-1.5, 1.5))),
            deform_amp=float(rng.uniform(0.0, 0.15)),
            deform_period=float(rng.uniform(6.0, 12.0)),
            color=tuple(float(c) for c in _hue_to_rgb(hues[k])),
            aspect=float(rng.uniform(0.6, 1.4)),
            lobes=int(rng.integers(3, 6)),
        ))
    return objs


def _hue_to_rgb(hue):
    i = hue * 6.0
    r = np.clip(abs(i - 3.0) - 1.0, 0, 1)
    g = np.clip(2.0 - abs(i - 2.0), 0, 1)
    b = np.clip(2.0 - abs(i - 4.0), 0, 1)
    return 0.15 + 0.75 * np.array([r, g, b])


def _reflect(p, lo, hi):
    """Position bouncing between lo and hi (triangle wave)."""
    if hi <= lo:
        return lo
    span = hi - lo
    u = (p - lo) % (2 * span)
    return lo + (u if u <= span else 2 * span - u)


def _validate(spec, objects):
    h = w = spec.image_size
    if spec.image_size % 32 or spec.image_size <= 0:
        raise SpecError(f"image size must be a positive multiple of 32, got {spec.image_size}")
    if spec.num_objects < 1 or len(objects) != spec.num_objects:
        raise SpecError(f"need num_objects >= 1 matching the object list, got {spec.num_objects}")
    if spec.num_objects > 255:
        raise SpecError("at most 255 objects fit an 8-bit mask")
    if spec.num_frames < 1:
        raise SpecError("num_frames must be >= 1")
    if spec.background not in BACKGROUNDS:
        raise SpecError(f"unknown background {spec.background!r}")
    for o in objects:
        if o.kind not in KINDS:
            raise SpecError(f"unknown shape kind {o.kind!r}")
        ext = o.size * (1.0 + abs(o.deform_amp)) * (1.25 if o.kind == "blob" else 1.0)
        ext_y = ext * (o.aspect if o.kind == "rectangle" else 1.0)
        if 2 * ext_y > h or 2 * ext > w:
            raise SpecError(f"{o.kind} of size {o.size} does not fit a {h}x{w} image")


def _background(spec, rng):
    h = w = spec.image_size
    if spec.background == "flat":
        return np.full((3, h, w), 0.45)
    if spec.background == "gradient":
        ramp = np.linspace(0.25, 0.65, w)[None, None, :]
        return np.broadcast_to(ramp, (3, h, w)) * np.array([1.0, 0.9, 0.8])[:, None, None]
    coarse = rng.uniform(0.3, 0.6, size=(3, h // 8 + 1, w // 8 + 1))
    y = np.linspace(0, h // 8, h)
    x = np.linspace(0, w // 8, w)
    # separable linear interpolation of the coarse grid
    y0 = np.minimum(y.astype(int), coarse.shape[1] - 2)
    x0 = np.minimum(x.astype(int), coarse.shape[2] - 2)
    ty, tx = (y - y0)[:, None], (x - x0)[None, :]
    c = coarse
    return ((1 - ty) * ((1 - tx) * c[:, y0][:, :, x0] + tx * c[:, y0][:, :, x0 + 1])
            + ty * ((1 - tx) * c[:, y0 + 1][:, :, x0] + tx * c[:, y0 + 1][:, :, x0 + 1]))


def object_region(o, t, h, w):
    """Boolean H x W region covered by object ``o`` at frame ``t``."""
    scale = 1.0 + o.deform_amp * math.sin(2 * math.pi * t / o.deform_period)
    reach = o.size * (1.0 + abs(o.deform_amp)) * (1.25 if o.kind == "blob" else 1.0)
    reach_y = reach * (o.aspect if o.kind == "rectangle" else 1.0)
    cy = _reflect(o.center[0] + o.velocity[0] * t, reach_y, h - 1 - reach_y)
    cx = _reflect(o.center[1] + o.velocity[1] * t, reach, w - 1 - reach)
    yy, xx = np.mgrid[0:h, 0:w]
    dy, dx = yy - cy, xx - cx
    if o.kind == "disc":
        r = o.size * scale
        return dy * dy + dx * dx <= r * r
    if o.kind == "rectangle":
        hx = o.size * scale
        hy = o.size * o.aspect / scale
        return (np.abs(dy) <= hy) & (np.abs(dx) <= hx)
    theta = np.arctan2(dy, dx)
    r = o.size * scale * (1.0 + 0.25 * np.sin(o.lobes * theta + 0.6 * t))
    return dy * dy + dx * dx <= r * r


def generate_sequence(spec):
    rng = np.random.default_rng(spec.seed)
    objects = list(spec.objects) if spec.objects else random_objects(spec, rng)
    _validate(spec, objects)
    h = w = spec.image_size
    bg = _background(spec, rng)
    yy, xx = np.mgrid[0:h, 0:w]
    frames, masks = [], []
    for t in range(spec.num_frames):
        img = np.array(bg, dtype=np.float64)
        mask = np.zeros((h, w), dtype=np.uint8)
        for k, o in enumerate(objects, start=1):
            region = object_region(o, t, h, w)
            color = np.clip(np.asarray(o.color) * (1.0 + spec.color_drift * t), 0.0, 1.0)
            # mild stripe texture so objects are not perfectly flat
            shade = 0.92 + 0.08 * np.sin(0.5 * (yy + xx) + k)
            img[:, region] = (color[:, None] * shade[region][None, :])
            mask[region] = k
        frames.append(np.clip(img, 0.0, 1.0).astype(np.float32))
        masks.append(mask)
    final = SceneSpec(**{**asdict(spec), "objects": objects})
    return SequenceRecord(frames, masks, True, {k: o.label for k, o in enumerate(objects, 1)}, final)


# ------------------------------------------------------------------ Netpbm

def _quantize(frame):
    return np.clip(np.rint(np.asarray(frame, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def encode_ppm(frame):
    """3 x H x W floats in [0, 1] -> P6 bytes."""
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[0] != 3:
        raise ContractError(f"frame must be 3 x H x W, got {frame.shape}")
    _, h, w = frame.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + _quantize(frame).transpose(1, 2, 0).tobytes()


def encode_pgm(mask):
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ContractError(f"mask must be H x W, got {mask.shape}")
    if mask.size and (mask.min() < 0 or mask.max() > 255):
        raise ContractError("mask indices must lie in 0..255")
    h, w = mask.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + mask.astype(np.uint8).tobytes()


def _parse_header(buf, magic):
    if buf[:2] != magic:
        raise ParseError(f"expected magic {magic!r}, found {bytes(buf[:2])!r}", 0)
    pos = 2
    values = []
    while len(values) < 3:
        start = pos
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        if pos == start:
            raise ParseError("expected whitespace in header", pos)
        tok_start = pos
        while pos < len(buf) and buf[pos:pos + 1].isdigit():
            pos += 1
        if pos == tok_start:
            raise ParseError("expected an integer in header", pos)
        values.append(int(buf[tok_start:pos]))
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise ParseError("expected a single whitespace byte after maxval", pos)
    w, h, maxval = values
    if maxval != 255:
        raise ParseError(f"only maxval 255 is supported, got {maxval}", pos)
    return w, h, pos + 1


def decode_ppm(buf):
    w, h, off = _parse_header(buf, b"P6")
    need = off + 3 * w * h
    if len(buf) < need:
        raise ParseError(f"payload truncated: need {3 * w * h} bytes, have {len(buf) - off}", len(buf))
    px = np.frombuffer(buf, dtype=np.uint8, count=3 * w * h, offset=off).reshape(h, w, 3)
    return (px.transpose(2, 0, 1).astype(np.float32) / 255.0)


def decode_pgm(buf):
    w, h, off = _parse_header(buf, b"P5")
    if len(buf) < off + w * h:
        raise ParseError(f"payload truncated: need {w * h} bytes, have {len(buf) - off}", len(buf))
    return np.frombuffer(buf, dtype=np.uint8, count=w * h, offset=off).reshape(h, w).copy()


def write_frame(path, frame):
    with open(path, "wb") as fh:
        fh.write(encode_ppm(frame))


def read_frame(path):
    with open(path, "rb") as fh:
        return decode_ppm(fh.read())


def write_mask(path, mask):
    with open(path, "wb") as fh:
        fh.write(encode_pgm(mask))


def read_mask(path):
    with open(path, "rb") as fh:
        return decode_pgm(fh.read())


def write_masks(directory, masks):
    os.makedirs(directory, exist_ok=True)
    for t, m in enumerate(masks):
        write_mask(os.path.join(directory, f"{t:05d}.pgm"), m)


def read_masks(directory):
    """Read ``%05d.pgm`` files from ``directory`` or its ``masks/`` child."""
    sub = os.path.join(directory, "masks")
    if os.path.isdir(sub):
        directory = sub
    names = sorted(n for n in os.listdir(directory) if n.endswith(".pgm"))
    return [read_mask(os.path.join(directory, n)) for n in names]


def write_sequence(record, directory):
    os.makedirs(os.path.join(directory, "frames"), exist_ok=True)
    for t, fr in enumerate(record.frames):
        write_frame(os.path.join(directory, "frames", f"{t:05d}.ppm"), fr)
    write_masks(os.path.join(directory, "masks"), record.masks)
    if record.spec is not None:
        with open(os.path.join(directory, "spec.json"), "w") as fh:
            fh.write(record.spec.to_json() + "\n")


def read_sequence(directory):
    fdir = os.path.join(directory, "frames")
    names = sorted(n for n in os.listdir(fdir) if n.endswith(".ppm"))
    frames = [read_frame(os.path.join(fdir, n)) for n in names]
    masks = read_masks(directory) if os.path.isdir(os.path.join(directory, "masks")) else []
    spec, labels = None, {}
    spec_path = os.path.join(directory, "spec.json")
    if os.path.exists(spec_path):
        with open(spec_path) as fh:
            spec = SceneSpec.from_dict(json.load(fh))
        labels = {k: o.label for k, o in enumerate(spec.objects, 1)}
    return SequenceRecord(frames, masks, bool(masks), labels, spec)
