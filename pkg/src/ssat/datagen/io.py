"""Image, parsing, landmark and manifest files."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .faces import ParsedImage, one_hot


def rgb_to_uint8(rgb: np.ndarray) -> np.ndarray:
    """``[3, H, W]`` in [-1, 1] to ``[H, W, 3]`` uint8."""
    return np.clip(np.round((np.asarray(rgb, np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8).transpose(1, 2, 0)


def uint8_to_rgb(arr: np.ndarray) -> np.ndarray:
    return (arr.astype(np.float64).transpose(2, 0, 1) / 127.5 - 1.0).astype(np.float32)


def write_ppm(path, rgb: np.ndarray) -> None:
    arr = rgb_to_uint8(rgb)
    h, w, _ = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def _ppm_tokens(data: bytes, count: int) -> tuple[list[int], int]:
    tokens, pos = [], 2
    while len(tokens) < count:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while data[pos : pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(int(data[start:pos]))
    return tokens, pos + 1


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:2] != b"P6":
        raise ValueError(f"{path}: not a binary PPM (P6) file")
    (w, h, maxval), pos = _ppm_tokens(data, 3)
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PPM is supported")
    arr = np.frombuffer(data, np.uint8, count=w * h * 3, offset=pos).reshape(h, w, 3)
    return uint8_to_rgb(arr)


def write_image(path, rgb: np.ndarray) -> None:
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        write_ppm(path, rgb)
    else:
        Image.fromarray(rgb_to_uint8(rgb), "RGB").save(path)


def _open(path) -> Image.Image:
    try:
        return Image.open(path)
    except UnidentifiedImageError:
        raise ValueError(f"{path}: not a readable image") from None


def read_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        return read_ppm(path)
    with _open(path) as im:
        return uint8_to_rgb(np.asarray(im.convert("RGB")))


def write_parsing(path, parsing: np.ndarray) -> None:
    Image.fromarray(parsing.argmax(axis=0).astype(np.uint8), "L").save(path)


def read_parsing(path, n_classes: int) -> np.ndarray:
    with _open(path) as im:
        labels = np.asarray(im.convert("L")).astype(np.int64)
    if labels.max() >= n_classes:
        raise ValueError(f"{path}: class index {labels.max()} exceeds {n_classes - 1}")
    return one_hot(labels, n_classes)


def write_landmarks(path, landmarks: np.ndarray) -> None:
    Path(path).write_text(json.dumps([[float(x), float(y)] for x, y in landmarks]))


def read_landmarks(path) -> np.ndarray:
    pts = np.asarray(json.loads(Path(path).read_text()), np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"{path}: landmarks must be a JSON array of [x, y] pairs")
    return pts


def save_parsed(stem, image: ParsedImage, ext: str = ".png") -> dict:
    """Write ``<stem>_rgb``, ``<stem>_parsing.png`` and ``<stem>_landmarks.json``."""
    stem = Path(stem)
    files = {
        "rgb": str(stem.with_name(stem.name + "_rgb" + ext)),
        "parsing": str(stem.with_name(stem.name + "_parsing.png")),
        "landmarks": str(stem.with_name(stem.name + "_landmarks.json")),
        "domain": image.domain,
    }
    write_image(files["rgb"], image.rgb)
    write_parsing(files["parsing"], image.parsing)
    write_landmarks(files["landmarks"], image.landmarks)
    return files


def load_parsed(entry: dict, n_classes: int, root=None) -> ParsedImage:
    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() or root is None else Path(root) / p

    rgb = read_image(resolve(entry["rgb"]))
    parsing = read_parsing(resolve(entry["parsing"]), n_classes)
    if "landmarks" in entry and entry["landmarks"]:
        landmarks = read_landmarks(resolve(entry["landmarks"]))
    else:
        landmarks = np.zeros((0, 2))
    if parsing.shape[1:] != rgb.shape[1:]:
        raise ValueError(f"parsing {parsing.shape[1:]} and image {rgb.shape[1:]} sizes differ")
    return ParsedImage(rgb, parsing, landmarks, entry.get("domain", "non_makeup"))


# -- dataset manifests ---------------------------------------------------------

MANIFEST = "manifest.json"


def _write_face(out_dir: Path, bank, domain: str, index: int, ext: str) -> dict:
    face = bank.get(domain, index)
    rel = Path("faces") / f"{domain}_{index:04d}"
    entry = save_parsed(out_dir / rel, face, ext)
    entry = {k: (str(Path(v).relative_to(out_dir)) if k != "domain" else v) for k, v in entry.items()}
    entry["seed"] = bank.face_seed(domain, index)
    return entry


def _write_pair(out_dir: Path, bank, spec, index: int, ext: str) -> dict:
    pair = bank.pair(spec)
    rel = Path("pairs") / f"pair_{index:06d}"
    y_bar = rel.with_name(rel.name + "_y_bar_t" + ext)
    x_bar = rel.with_name(rel.name + "_x_bar_r" + ext)
    write_image(out_dir / y_bar, pair.y_bar_t)
    write_image(out_dir / x_bar, pair.x_bar_r)
    return {"y_bar_t": str(y_bar), "x_bar_r": str(x_bar)}


def write_dataset(out_dir, n_pairs: int, seed: int = 0, config=None, ext: str = ".png", workers: int = 1) -> Path:
    """Render faces and pseudo-pair ground truth for a square grid and write a manifest.

    ``n_pairs`` must equal ``2 * n * n``: every bare/makeup combination in
    both slot orders. Returns the manifest path.
    """
    from concurrent.futures import ProcessPoolExecutor

    from .faces import FaceConfig
    from .pairs import FaceBank, enumerate_pairs, grid_for_pairs

    config = config or FaceConfig()
    out_dir = Path(out_dir)
    (out_dir / "faces").mkdir(parents=True, exist_ok=True)
    (out_dir / "pairs").mkdir(parents=True, exist_ok=True)
    n = grid_for_pairs(n_pairs)
    bank = FaceBank(n, n, seed, config)
    faces = {
        "non_makeup": [_write_face(out_dir, bank, "non_makeup", i, ext) for i in range(n)],
        "makeup": [_write_face(out_dir, bank, "makeup", j, ext) for j in range(n)],
    }
    specs = enumerate_pairs(n, n, seed)
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            gts = list(pool.map(_pair_job, [(str(out_dir), n, seed, config, s, i, ext) for i, s in enumerate(specs)], chunksize=32))
    else:
        gts = [_write_pair(out_dir, bank, s, i, ext) for i, s in enumerate(specs)]
    pairs = []
    for i, (spec, gt) in enumerate(zip(specs, gts)):
        t_dom, r_dom = ("non_makeup", "makeup") if spec.order == "transfer" else ("makeup", "non_makeup")
        t_idx, r_idx = (spec.bare, spec.makeup) if spec.order == "transfer" else (spec.makeup, spec.bare)
        pairs.append({
            "index": i,
            "order": spec.order,
            "seed": spec.seed,
            "target": {"domain": t_dom, "index": t_idx},
            "reference": {"domain": r_dom, "index": r_idx},
            **gt,
        })
    manifest = {
        "format": "ssat-dataset-1",
        "seed": seed,
        "size": config.size,
        "n_classes": config.n_classes,
        "n_bare": n,
        "n_makeup": n,
        "faces": faces,
        "pairs": pairs,
    }
    path = out_dir / MANIFEST
    path.write_text(json.dumps(manifest, indent=1))
    return path


def _pair_job(args) -> dict:
    from .pairs import FaceBank

    out_dir, n, seed, config, spec, index, ext = args
    return _write_pair(Path(out_dir), FaceBank(n, n, seed, config), spec, index, ext)


def read_manifest(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST
    manifest = json.loads(path.read_text())
    if manifest.get("format") != "ssat-dataset-1":
        raise ValueError(f"{path}: unrecognized manifest format")
    manifest["_root"] = str(path.parent)
    return manifest


class ManifestDataset:
    """Pseudo pairs read back from a dataset directory written by :func:`write_dataset`."""

    def __init__(self, path):
        from .pairs import PseudoPair

        self._pair_type = PseudoPair
        self.manifest = read_manifest(path)
        self.root = Path(self.manifest["_root"])
        self.n_classes = self.manifest["n_classes"]
        self._faces: dict[tuple[str, int], ParsedImage] = {}

    def __len__(self) -> int:
        return len(self.manifest["pairs"])

    def face(self, domain: str, index: int) -> ParsedImage:
        key = (domain, index)
        if key not in self._faces:
            entry = self.manifest["faces"][domain][index]
            self._faces[key] = load_parsed(entry, self.n_classes, self.root)
        return self._faces[key]

    def __getitem__(self, i: int):
        entry = self.manifest["pairs"][i]
        t, r = entry["target"], entry["reference"]
        return self._pair_type(
            target=self.face(t["domain"], t["index"]),
            reference=self.face(r["domain"], r["index"]),
            y_bar_t=read_image(self.root / entry["y_bar_t"]),
            x_bar_r=read_image(self.root / entry["x_bar_r"]),
        )
