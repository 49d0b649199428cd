import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sspembed.serialization import decode_array, decode_float, dumps, encode


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_roundtrip_exact(x):
    assert decode_float(encode(x)) == x


@given(st.lists(st.floats(-1e300, 1e300), min_size=1, max_size=20))
def test_array_roundtrip_exact(values):
    arr = np.array(values).reshape(-1, 1)
    assert np.array_equal(decode_array(encode(arr)), arr)


def test_natives_kept():
    out = encode({"a": True, "b": 3, "c": np.int64(4), "d": None, "e": "x", "f": (1.5,)})
    assert out == {"a": True, "b": 3, "c": 4, "d": None, "e": "x", "f": ["1.5"]}


def test_dumps_sorted_and_stable():
    text = dumps({"b": 0.1, "a": [1, 2.0]})
    assert text == dumps({"a": [1, 2.0], "b": 0.1})
    assert list(json.loads(text)) == ["a", "b"]
    assert text.endswith("\n")


def test_non_finite_rejected_on_decode():
    for bad in ("nan", "inf", float("-inf")):
        with pytest.raises(ValueError):
            decode_float(bad)
    assert math.isnan(float(encode(float("nan"))))


def test_unencodable():
    with pytest.raises(TypeError):
        encode(object())
