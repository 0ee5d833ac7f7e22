"""Regenerate the golden container fixtures.

The byte layouts are written out by hand here (struct.pack, little-endian,
no padding) rather than through the library, so the fixtures pin the wire
format independently of the code under test.

Run from the repository root:  python tests/golden/make_fixtures.py
"""

import struct
from pathlib import Path

HERE = Path(__file__).parent

FEATURE_VALUES = [1.5, -2.0, 0.25, 4.0, 3.0, 0.5, -1.25, 8.0]  # shape (2, 2, 2)

# tiny config: channels=2, grid 2x2, scale 2, levels 1, out_dim 3, mlp_ratio 4
WEIGHT_SECTIONS = [
    ("w_q", (2, 2)),
    ("w_k", (2, 2)),
    ("w_v", (2, 2)),
    ("w_o", (2, 2)),
    ("mlp_w1", (2, 8)),
    ("mlp_b1", (8,)),
    ("mlp_w2", (8, 2)),
    ("mlp_b2", (2,)),
    ("w_out", (2, 3)),
    ("b_out", (3,)),
]


def section_values(index: int, count: int) -> list[float]:
    # quarter-step ramps are exactly representable in f32
    return [(index + 1) * 0.25 + 0.5 * i for i in range(count)]


def main() -> None:
    feature = struct.pack("<4sII3I", b"TPKF", 1, 3, 2, 2, 2)
    feature += struct.pack("<8f", *FEATURE_VALUES)
    (HERE / "feature_2x2x2.tpkf").write_bytes(feature)

    out = [struct.pack("<4sII", b"TPKW", 1, len(WEIGHT_SECTIONS))]
    for idx, (name, shape) in enumerate(WEIGHT_SECTIONS):
        raw = name.encode()
        out.append(struct.pack("<I", len(raw)) + raw)
        out.append(struct.pack(f"<I{len(shape)}I", len(shape), *shape))
        count = 1
        for d in shape:
            count *= d
        out.append(struct.pack(f"<{count}f", *section_values(idx, count)))
    (HERE / "weights_tiny.tpkw").write_bytes(b"".join(out))
    print("wrote", HERE / "feature_2x2x2.tpkf", "and", HERE / "weights_tiny.tpkw")


if __name__ == "__main__":
    main()
