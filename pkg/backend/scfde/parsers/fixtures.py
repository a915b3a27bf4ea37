# backend/scfde/parsers/fixtures.py
# Plain-text regression fixtures for channels and equalizer designs.
#
#   # scfde-fixture v1
#   kind channel
#   seed 7
#   n_c 64
#   array sr_taps 16 2 2
#   array rd_taps 16 2 2
#   <re> <im>            one line per entry, arrays in header order, C order
#
# Scalars are "key value" lines; every array declared with "array" is read
# back in the same order.

from io import StringIO
from typing import Dict, List, Tuple, Union

import numpy as np

from ..design.equalizer import EqualizerDesign
from ..errors import ConfigurationError
from ..linalg.channel import ChannelRealization
from ..schemas import ReceiverMode

HEADER = "# scfde-fixture v1"


def _dump(kind: str, scalars: Dict[str, object], arrays: Dict[str, np.ndarray]) -> str:
    out = StringIO()
    out.write(HEADER + "\n")
    out.write(f"kind {kind}\n")
    for key, value in scalars.items():
        out.write(f"{key} {value}\n")
    for name, arr in arrays.items():
        out.write(f"array {name} {' '.join(str(d) for d in arr.shape)}\n")
    for arr in arrays.values():
        for z in np.asarray(arr, dtype=complex).ravel():
            out.write(f"{float(z.real)!r} {float(z.imag)!r}\n")
    return out.getvalue()


def _load(text: str, kind: str) -> Tuple[Dict[str, str], Dict[str, np.ndarray]]:
    lines = [line.strip() for line in text.splitlines() if line.strip()]
    if not lines or lines[0] != HEADER:
        raise ConfigurationError("not an scfde fixture (missing header)")
    scalars: Dict[str, str] = {}
    shapes: List[Tuple[str, Tuple[int, ...]]] = []
    i = 1
    while i < len(lines) and not _is_number(lines[i].split()[0]):
        key, _, rest = lines[i].partition(" ")
        if key == "array":
            parts = rest.split()
            shapes.append((parts[0], tuple(int(d) for d in parts[1:])))
        else:
            scalars[key] = rest
        i += 1
    if scalars.get("kind") != kind:
        raise ConfigurationError(f"fixture holds a {scalars.get('kind')!r}, expected {kind!r}")

    values = np.array([complex(float(a), float(b)) for a, b in (line.split() for line in lines[i:])])
    arrays: Dict[str, np.ndarray] = {}
    offset = 0
    for name, shape in shapes:
        size = int(np.prod(shape))
        if offset + size > values.size:
            raise ConfigurationError(f"fixture truncated inside array {name}")
        arrays[name] = values[offset:offset + size].reshape(shape)
        offset += size
    if offset != values.size:
        raise ConfigurationError(f"fixture has {values.size - offset} trailing entries")
    return scalars, arrays


def _is_number(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False


# ---------- channels ----------
def dump_channel(ch: ChannelRealization) -> str:
    return _dump("channel", {"seed": ch.seed, "n_c": ch.n_c},
                 {"sr_taps": ch.sr_taps, "rd_taps": ch.rd_taps})


def load_channel(text: str) -> ChannelRealization:
    scalars, arrays = _load(text, "channel")
    seed = None if scalars.get("seed", "None") == "None" else int(scalars["seed"])
    return ChannelRealization.from_taps(arrays["sr_taps"], arrays["rd_taps"], int(scalars["n_c"]), seed=seed)


# ---------- equalizer designs ----------
def dump_design(design: EqualizerDesign) -> str:
    return _dump("design", {"mode": design.mode.value, "n_fb": design.n_fb}, {
        "fff_tones": design.fff_tones,
        "fbf_taps": design.fbf_taps,
        "error_diag": design.error_diag,
        "error_cov": design.error_cov,
    })


def load_design(text: str) -> EqualizerDesign:
    scalars, arrays = _load(text, "design")
    return EqualizerDesign(
        fff_tones=arrays["fff_tones"],
        fbf_taps=arrays["fbf_taps"],
        n_fb=int(scalars["n_fb"]),
        error_diag=np.real(arrays["error_diag"]),
        error_cov=arrays["error_cov"],
        mode=ReceiverMode(scalars["mode"]),
    )


def save(obj: Union[ChannelRealization, EqualizerDesign], path) -> None:
    text = dump_channel(obj) if isinstance(obj, ChannelRealization) else dump_design(obj)
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)
