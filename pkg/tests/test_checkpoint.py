"""Checkpoint container: lossless round trips and bit-identical resume."""

import numpy as np
import pytest

from tinyvlm.checkpoint import load_checkpoint, save_checkpoint
from tinyvlm.errors import FormatError
from tinyvlm.train import TrainState, joint_config, run_stage

from test_train import small_bundle, small_records, stage_overrides


def make_trained(tmp_path, steps=3):
    bundle = small_bundle(seed=4)
    records = small_records()
    cfg = joint_config(epochs=10, seed=6, **stage_overrides())
    _, state = run_stage(bundle, records, cfg, max_steps=steps)
    path = tmp_path / "ckpt.rvc"
    save_checkpoint(bundle, state, path)
    return bundle, records, cfg, state, path


class TestRoundTrip:
    def test_all_buffers_equal(self, tmp_path):
        bundle, _, _, state, path = make_trained(tmp_path)
        loaded, loaded_state = load_checkpoint(path)
        assert loaded.params.keys() == bundle.params.keys()
        for name in bundle.params:
            assert np.array_equal(loaded.params[name].data, bundle.params[name].data)
        for name in bundle.buffers:
            assert np.array_equal(loaded.buffers[name], bundle.buffers[name])
        assert loaded_state.global_step == state.global_step
        assert loaded_state.epoch_order == state.epoch_order
        assert loaded_state.rng.bit_generator.state == state.rng.bit_generator.state

    def test_configs_and_vocab_survive(self, tmp_path):
        bundle, _, _, _, path = make_trained(tmp_path)
        loaded, _ = load_checkpoint(path)
        assert loaded.encoder_config == bundle.encoder_config
        assert loaded.lm_config == bundle.lm_config
        assert loaded.vocab.id_to_token == bundle.vocab.id_to_token

    def test_optimizer_state_survives(self, tmp_path):
        bundle, _, _, state, path = make_trained(tmp_path)
        _, loaded_state = load_checkpoint(path)
        assert loaded_state.optimizer.t == state.optimizer.t
        for name, buf in state.optimizer.m.items():
            assert np.array_equal(loaded_state.optimizer.m[name], buf)


class TestResume:
    def test_resume_equals_straight_through(self, tmp_path):
        records = small_records()
        cfg = joint_config(epochs=10, seed=9, **stage_overrides())

        straight = small_bundle(seed=8)
        hist_all, _ = run_stage(straight, records, cfg, max_steps=10)

        split = small_bundle(seed=8)
        hist_a, state = run_stage(split, records, cfg, max_steps=5)
        path = tmp_path / "mid.rvc"
        save_checkpoint(split, state, path)
        resumed, resumed_state = load_checkpoint(path)
        hist_b, _ = run_stage(resumed, records, cfg, state=resumed_state, max_steps=5)

        assert [h["loss"] for h in hist_a + hist_b] == [h["loss"] for h in hist_all]
        for name in straight.params:
            assert np.array_equal(straight.params[name].data,
                                  resumed.params[name].data), name
        for name in straight.buffers:
            assert np.array_equal(straight.buffers[name], resumed.buffers[name]), name


class TestCorruption:
    def test_truncated_file(self, tmp_path):
        _, _, _, _, path = make_trained(tmp_path)
        raw = path.read_bytes()
        path.write_bytes(raw[:len(raw) // 2])
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_bad_magic(self, tmp_path):
        _, _, _, _, path = make_trained(tmp_path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"NOPE"
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="not an RVC1"):
            load_checkpoint(path)

    def test_flipped_payload_byte(self, tmp_path):
        _, _, _, _, path = make_trained(tmp_path)
        raw = bytearray(path.read_bytes())
        raw[len(raw) // 2] ^= 0x01
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="checksum"):
            load_checkpoint(path)

    def test_load_failure_leaves_no_partial_state(self, tmp_path):
        bundle, _, _, _, path = make_trained(tmp_path)
        before = {n: t.data.copy() for n, t in bundle.params.items()}
        path.write_bytes(path.read_bytes()[:40])
        with pytest.raises(FormatError):
            load_checkpoint(path)
        for name, arr in before.items():
            assert np.array_equal(bundle.params[name].data, arr)
