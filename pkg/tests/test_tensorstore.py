import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multiflow.errors import FormatError, ValidationError
from multiflow.tensorstore import (
    SelectionResult,
    TensorMap,
    read_container,
    select_topk,
    write_container,
)


def topk_oracle(values, k):
    """Brute-force reference: sort by (value desc, index asc), take k."""
    order = sorted(range(len(values)), key=lambda i: (-values[i], i))
    return sorted(order[:k])


class TestContainer:
    def test_single_tensor_roundtrip(self, tmp_path):
        tm = TensorMap()
        tm.put("w", np.array([[1, 2], [3, 4]], dtype=np.float32))
        path = tmp_path / "t.safetensors"
        write_container(tm, path)
        back = read_container(path)
        assert back == tm
        np.testing.assert_array_equal(back.get("w"), [[1, 2], [3, 4]])

    def test_write_read_write_byte_identical(self, tmp_path):
        rng = np.random.default_rng(0)
        tm = TensorMap(metadata={"k": "v"})
        tm.put("b", rng.standard_normal((3, 5)).astype(np.float32))
        tm.put("a", (rng.random((2, 2)) > 0.5).astype(np.uint8))
        p1, p2 = tmp_path / "a.st", tmp_path / "b.st"
        write_container(tm, p1)
        write_container(read_container(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_same_map_same_bytes(self, tmp_path):
        tm = TensorMap()
        tm.put("x", np.zeros((4,), dtype=np.float32))
        write_container(tm, tmp_path / "1.st")
        write_container(tm, tmp_path / "2.st")
        assert (tmp_path / "1.st").read_bytes() == (tmp_path / "2.st").read_bytes()

    def test_lexicographic_order_in_file(self, tmp_path):
        tm = TensorMap()
        tm.put("b", np.ones((1,), dtype=np.float32))
        tm.put("a", np.zeros((1,), dtype=np.float32))
        path = tmp_path / "t.st"
        write_container(tm, path)
        raw = path.read_bytes()
        (n,) = struct.unpack("<Q", raw[:8])
        header = json.loads(raw[8 : 8 + n])
        assert header["a"]["data_offsets"] == [0, 4]
        assert header["b"]["data_offsets"] == [4, 8]

    def test_empty_map(self, tmp_path):
        path = tmp_path / "empty.st"
        write_container(TensorMap(), path)
        back = read_container(path)
        assert len(back) == 0 and back.metadata == {}

    def test_golden_bytes_hand_built(self, tmp_path):
        # independently constructed expected bytes for one F32 tensor
        tm = TensorMap()
        tm.put("w", np.array([1.0, 2.0], dtype=np.float32))
        path = tmp_path / "g.st"
        write_container(tm, path)
        header = b'{"w":{"data_offsets":[0,8],"dtype":"F32","shape":[2]}}'
        expected = struct.pack("<Q", len(header)) + header + struct.pack("<ff", 1.0, 2.0)
        assert path.read_bytes() == expected

    def test_size_mismatch_error(self, tmp_path):
        header = b'{"w":{"dtype":"F32","shape":[2,2],"data_offsets":[0,12]}}'
        raw = struct.pack("<Q", len(header)) + header + b"\x00" * 12
        path = tmp_path / "bad.st"
        path.write_bytes(raw)
        with pytest.raises(FormatError, match="size mismatch"):
            read_container(path)

    def test_bad_dtype_error(self, tmp_path):
        header = b'{"w":{"dtype":"F64","shape":[1],"data_offsets":[0,8]}}'
        path = tmp_path / "bad.st"
        path.write_bytes(struct.pack("<Q", len(header)) + header + b"\x00" * 8)
        with pytest.raises(FormatError, match="dtype"):
            read_container(path)

    def test_overlap_error(self, tmp_path):
        header = (
            b'{"a":{"dtype":"F32","shape":[2],"data_offsets":[0,8]},'
            b'"b":{"dtype":"F32","shape":[2],"data_offsets":[4,12]}}'
        )
        path = tmp_path / "bad.st"
        path.write_bytes(struct.pack("<Q", len(header)) + header + b"\x00" * 12)
        with pytest.raises(FormatError, match="overlap"):
            read_container(path)

    def test_out_of_bounds_error(self, tmp_path):
        header = b'{"a":{"dtype":"F32","shape":[4],"data_offsets":[0,16]}}'
        path = tmp_path / "bad.st"
        path.write_bytes(struct.pack("<Q", len(header)) + header + b"\x00" * 8)
        with pytest.raises(FormatError, match="bounds|size"):
            read_container(path)

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "bad.st"
        path.write_bytes(b"\x04\x00\x00")
        with pytest.raises(FormatError, match="truncated"):
            read_container(path)

    def test_malformed_json(self, tmp_path):
        header = b'{"w": nope}'
        path = tmp_path / "bad.st"
        path.write_bytes(struct.pack("<Q", len(header)) + header)
        with pytest.raises(FormatError, match="JSON"):
            read_container(path)

    def test_control_character_name_rejected(self):
        tm = TensorMap()
        with pytest.raises(ValidationError, match="control"):
            tm.put("bad\x00name", np.zeros(1, dtype=np.float32))

    def test_metadata_roundtrip(self, tmp_path):
        tm = TensorMap(metadata={"criterion": "multiflow", "keep_ratio": "0.37"})
        tm.put("m", np.ones((2, 3), dtype=np.uint8))
        path = tmp_path / "m.st"
        write_container(tm, path)
        assert read_container(path).metadata == tm.metadata

    def test_unsupported_dtype_rejected(self):
        tm = TensorMap()
        with pytest.raises(ValidationError, match="dtype"):
            tm.put("w", np.zeros(3, dtype=np.float64))

    @given(
        specs=st.lists(
            st.tuples(
                st.text(
                    alphabet=st.characters(min_codepoint=0x21, max_codepoint=0x7E),
                    min_size=1,
                    max_size=8,
                ),
                st.integers(min_value=0, max_value=5),
                st.integers(min_value=1, max_value=4),
            ),
            max_size=4,
            unique_by=lambda t: t[0],
        )
    )
    @settings(max_examples=50, deadline=None)
    def test_roundtrip_property(self, specs, tmp_path_factory):
        tmp = tmp_path_factory.mktemp("prop")
        rng = np.random.default_rng(1)
        tm = TensorMap()
        for name, rows, cols in specs:
            tm.put(name, rng.standard_normal((rows, cols)).astype(np.float32))
        path = tmp / "p.st"
        write_container(tm, path)
        assert read_container(path) == tm


class TestSelectTopk:
    def test_no_ties_at_cut(self):
        sel = select_topk(np.array([5, 4, 1, 1], dtype=np.float32), 2)
        assert sel.kept_indices.tolist() == [0, 1]
        assert sel.threshold_value == 4.0

    def test_tie_break_lowest_index(self):
        sel = select_topk(np.array([3, 2, 2, 1], dtype=np.float32), 2)
        assert sel.kept_indices.tolist() == [0, 1]
        assert sel.tie_count_at_threshold == 2

    def test_boundaries(self):
        values = np.array([1.0, 2.0, 3.0], dtype=np.float32)
        assert select_topk(values, 0).kept_indices.size == 0
        assert select_topk(values, 3).kept_indices.tolist() == [0, 1, 2]

    def test_k_out_of_range(self):
        with pytest.raises(ValidationError):
            select_topk(np.zeros(3, dtype=np.float32), 4)

    def test_partition_property(self):
        rng = np.random.default_rng(5)
        values = rng.choice([0.0, 1.0, 2.0], size=64).astype(np.float32)
        for k in (0, 1, 7, 32, 64):
            sel = select_topk(values, k)
            kept = set(sel.kept_indices.tolist())
            dropped = set(range(64)) - kept
            if kept and dropped:
                vmin_kept = min(values[i] for i in kept)
                vmax_drop = max(values[i] for i in dropped)
                assert vmin_kept >= vmax_drop
                if vmin_kept == vmax_drop:
                    t = vmin_kept
                    kept_at = [i for i in kept if values[i] == t]
                    drop_at = [i for i in dropped if values[i] == t]
                    assert max(kept_at, default=-1) < min(drop_at, default=1 << 30)

    @given(
        st.lists(st.integers(min_value=-10, max_value=10), min_size=0, max_size=20),
        st.integers(min_value=0, max_value=20),
    )
    @settings(max_examples=300, deadline=None)
    def test_matches_bruteforce_oracle(self, values, k):
        if k > len(values):
            return
        arr = np.array(values, dtype=np.float32)
        sel = select_topk(arr, k)
        assert sel.kept_indices.tolist() == topk_oracle(values, k)

    def test_pure_function(self):
        values = np.random.default_rng(3).random(1000).astype(np.float32)
        a = select_topk(values, 137)
        b = select_topk(values, 137)
        assert np.array_equal(a.kept_indices, b.kept_indices)
        assert a.threshold_value == b.threshold_value

    def test_rejects_nan(self):
        with pytest.raises(ValidationError):
            select_topk(np.array([1.0, np.nan], dtype=np.float32), 1)
