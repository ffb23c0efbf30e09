import numpy as np
import pytest

from limbchan.archive import read_archive, write_archive
from limbchan.errors import ArchiveError
from limbchan.synthetic import HELD_OUT_CLASS, TRAINED_CLASS, SyntheticSpec, make_synthetic_dataset


def test_round_trip(tmp_path):
    ds = make_synthetic_dataset(SyntheticSpec(n_frames=10, T=16, class_fractions={TRAINED_CLASS: 0.3,
                                                                                 HELD_OUT_CLASS: 0.2}))
    path = write_archive(tmp_path / "a.lcb", ds)
    raw = path.read_bytes()
    assert raw[:4] == b"LCB1"
    back = read_archive(path)
    np.testing.assert_array_equal(back.data, ds.data.astype(np.float32))
    assert back.class_names == ds.class_names
    assert back.record_ids == ds.record_ids
    assert back.channel_names == ds.channel_names
    # manifest follows the table order
    tail = raw[16 + 4 * 10 * 16 * 12 + 10:].decode().split("\n")
    assert tail == [TRAINED_CLASS, HELD_OUT_CLASS, "Healthy Control"]


def test_rewrite_is_byte_identical(tmp_path):
    ds = make_synthetic_dataset(SyntheticSpec(n_frames=6, T=8))
    a = write_archive(tmp_path / "a.lcb", ds).read_bytes()
    b = write_archive(tmp_path / "b.lcb", read_archive(tmp_path / "a.lcb")).read_bytes()
    assert a == b


@pytest.mark.parametrize("mutate", [lambda r: b"XXXX" + r[4:], lambda r: r[:30], lambda r: r[:10]])
def test_corrupt(tmp_path, mutate):
    ds = make_synthetic_dataset(SyntheticSpec(n_frames=4, T=8))
    p = write_archive(tmp_path / "a.lcb", ds)
    p.write_bytes(mutate(p.read_bytes()))
    with pytest.raises(ArchiveError):
        read_archive(p)
