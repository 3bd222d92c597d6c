from hypothesis import strategies as st

from lorachain.costmodel import ShapeConfig


@st.composite
def reducing_shapes(draw, max_dim=16384, max_b=128, max_s=4096):
    """Shapes with r(i+o) < io, drawn directly instead of filtered.

    i, o >= 3 guarantees io/(i+o) > 1, so rank 1 is always admissible.
    """
    i = draw(st.integers(3, max_dim))
    o = draw(st.integers(3, max_dim))
    r_max = -(-i * o // (i + o)) - 1
    r = draw(st.integers(1, r_max))
    return ShapeConfig(draw(st.integers(1, max_b)), draw(st.integers(1, max_s)), i, o, r)
