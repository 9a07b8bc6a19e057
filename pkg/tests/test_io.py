import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rmss.cli import SCHEMA
from rmss.io import (Checkpoint, ConfigError, DataError, build_sections, checkpoint_bytes,
                     checkpoint_from_bytes, config_to_text, parse_config_text, parse_sequence,
                     read_dataset, sequence_to_ndjson, write_dataset)
from rmss.synth import SceneConfig


def test_dataset_round_trip_is_byte_exact(small_dataset, tmp_path):
    write_dataset(small_dataset, tmp_path / "a")
    loaded = read_dataset(tmp_path / "a")
    write_dataset(loaded, tmp_path / "b")
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
    assert loaded.splits == small_dataset.splits
    for (_, a), (_, b) in zip(small_dataset.sequences, loaded.sequences):
        for s, t in zip(a, b):
            np.testing.assert_array_equal(s.xyz, t.xyz)
            np.testing.assert_array_equal(s.v_comp, t.v_comp)
            assert s.ego_velocity == t.ego_velocity


def test_sequence_text_round_trip(small_dataset):
    seq_id, scans = small_dataset.sequences[0]
    text = sequence_to_ndjson(seq_id, scans)
    sid, again = parse_sequence(text)
    assert sid == seq_id
    assert sequence_to_ndjson(sid, again) == text


def test_malformed_sequence_is_data_error(small_dataset, tmp_path):
    with pytest.raises(DataError):
        parse_sequence("{not json")
    with pytest.raises(DataError):
        read_dataset(tmp_path)


@settings(max_examples=40, deadline=None)
@given(st.dictionaries(st.text("abcxyz._", min_size=1, max_size=8),
                       st.lists(st.integers(0, 5), min_size=0, max_size=3), max_size=4),
       st.integers(0, 2 ** 31))
def test_checkpoint_round_trip(shapes, seed):
    rng = np.random.default_rng(seed)
    layers = {k: rng.normal(0, 1, tuple(v)) for k, v in shapes.items()}
    ckpt = Checkpoint(layers, {"kind": "model", "x": [1, 2.5]})
    raw = checkpoint_bytes(ckpt)
    back = checkpoint_from_bytes(raw)
    assert back.config == ckpt.config
    assert list(back.layers) == list(layers)
    for k in layers:
        np.testing.assert_array_equal(back.layers[k], layers[k])
    assert checkpoint_bytes(back) == raw


def test_corrupt_checkpoints_rejected():
    raw = checkpoint_bytes(Checkpoint({"w": np.ones((2, 2))}, {}))
    for bad in (b"XXXX" + raw[4:], raw[:-1], raw + b"\0", raw[:-40] + bytes([raw[-40] ^ 1]) + raw[-39:]):
        with pytest.raises(DataError):
            checkpoint_from_bytes(bad)


def test_config_parsing_and_defaults():
    flat = parse_config_text("# comment\nscene.seed = 4\nscene.rcs_range = [-1, 2]\n"
                             "encoder.activation = silu  # trailing\n")
    sec = build_sections(flat, SCHEMA)
    assert sec["scene"].seed == 4 and sec["scene"].rcs_range == (-1.0, 2.0)
    assert sec["encoder"].activation == "silu"
    base = {"scene": SceneConfig(n_sequences=50)}
    assert build_sections({"scene.seed": 1}, SCHEMA, base)["scene"].n_sequences == 50
    for text in ("scene.nope = 1", "bogus.seed = 1", "scene.seed", "scene.seed = 1\nscene.seed = 2",
                 "finetune.label_fraction = 0", "finetune.tversky = 1"):
        with pytest.raises(ConfigError):
            build_sections(parse_config_text(text), SCHEMA)


def test_config_text_round_trip():
    sec = build_sections({}, SCHEMA)
    text = config_to_text(sec)
    assert build_sections(parse_config_text(text), SCHEMA) == sec
