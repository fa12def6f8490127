import struct

import numpy as np
import pytest

from foe.tensor import Tensor, io

# Hand-assembled: magic, dtype 4 (c128), rank 1, 6 reserved, extent 2, then
# re/im pairs for [1+2j, -0.5+0.25j].
GOLDEN_C128 = (b"FOT1" + bytes([4, 1]) + bytes(6) + (2).to_bytes(8, "little")
               + struct.pack("<4d", 1.0, 2.0, -0.5, 0.25))


def test_roundtrip_f64_bit_identical(tmp_path):
    x = np.random.default_rng(3).standard_normal((4, 5, 6))
    path = tmp_path / "x.fot"
    io.tensor_io(path, Tensor(x), "write")
    back = io.tensor_io(path)
    assert back.dtype == np.float64 and back.tobytes() == x.tobytes()


@pytest.mark.parametrize("dtype", [np.float32, np.float64, np.complex64, np.complex128])
def test_roundtrip_dtypes(dtype):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((3, 2)).astype(dtype)
    if np.iscomplexobj(x):
        x = x + 1j * rng.standard_normal((3, 2)).astype(x.real.dtype)
    back = io.decode(io.encode(x))
    assert back.dtype == x.dtype and np.array_equal(back, x)


def test_c128_golden_bytes():
    z = np.array([1 + 2j, -0.5 + 0.25j])
    assert io.encode(z) == GOLDEN_C128
    np.testing.assert_array_equal(io.decode(GOLDEN_C128), z)


def test_scalar_rank_zero():
    back = io.decode(io.encode(np.float64(2.5)))
    assert back.shape == () and back == 2.5


def test_truncated_payload():
    with pytest.raises(io.TruncatedError) as exc:
        io.decode(GOLDEN_C128[:-3])
    assert exc.value.code == 4


def test_truncated_header():
    with pytest.raises(io.TruncatedError):
        io.decode(b"FOT1\x04")


def test_bad_magic():
    with pytest.raises(io.BadMagicError) as exc:
        io.decode(b"FOT2" + GOLDEN_C128[4:])
    assert exc.value.code == 2


def test_bad_dtype():
    bad = GOLDEN_C128[:4] + bytes([9]) + GOLDEN_C128[5:]
    with pytest.raises(io.BadDtypeError) as exc:
        io.decode(bad)
    assert exc.value.code == 3
    with pytest.raises(io.BadDtypeError):
        io.encode(np.arange(3))


def test_error_codes_distinct():
    codes = {io.FotError.code, io.BadMagicError.code, io.BadDtypeError.code, io.TruncatedError.code}
    assert len(codes) == 4


def test_trailing_bytes_rejected():
    with pytest.raises(io.FotError):
        io.decode(GOLDEN_C128 + b"\0")


def test_bad_direction(tmp_path):
    with pytest.raises(ValueError):
        io.tensor_io(tmp_path / "a", None, "append")
