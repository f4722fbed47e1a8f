import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import ridge_oracle, small_reservoir
from metafors.core import (
    MapperTargets,
    MetaLibrary,
    SignalMapper,
    build_meta_library,
    flatten_model,
    infer_tailored_forecaster,
    infer_tailored_forecasters,
    metafors_forecast,
    train_signal_mapper,
    train_signal_mappers,
    unflatten_model,
)
from metafors.harness.presets import RESERVOIRS
from metafors.metrics import ks_distance
from metafors.reservoir import (
    ReservoirSpec,
    TrainedModel,
    build_reservoir,
    drive_open_loop,
    synchronize_then_forecast,
)
from metafors.systems import MapKind, Series, chaotic_map_library, logistic_trajectory


def table_reservoirs(seed):
    f, sm = RESERVOIRS["logistic"]
    make = lambda d, s: build_reservoir(ReservoirSpec(
        d["n_nodes"], d["mean_in_degree"], d["spectral_radius"], d["input_strength"],
        d["bias_strength"], d["leakage"], 1, s))
    return make(f, seed), make(sm, seed + 100)


def toy_library(n_members=2, n_train=40, n_trans=5, n_test=3, stride=1, seed=0, n_sys=1):
    rng = np.random.default_rng(seed)
    res = small_reservoir(n_nodes=12, n_inputs=n_sys, seed=seed)
    sigs = [Series(rng.uniform(0, 1, (n_train, n_sys))) for _ in range(n_members)]
    return res, build_meta_library(res, sigs, n_trans, 1e-6, n_test, stride)


class TestFlatten:
    def test_row_major(self):
        w = np.array([[1.0, 2, 3], [4, 5, 6]])
        assert flatten_model(w).tolist() == [1, 2, 3, 4, 5, 6]
        assert flatten_model(TrainedModel(w, "h", 0.0, 1)).tolist() == [1, 2, 3, 4, 5, 6]

    def test_zero(self):
        assert not flatten_model(np.zeros((3, 4))).any()

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 5), st.integers(1, 40), st.integers(0, 2**31))
    def test_round_trip(self, n_out, n_nodes, seed):
        w = np.random.default_rng(seed).normal(size=(n_out, n_nodes))
        back = unflatten_model(flatten_model(w), n_out, n_nodes)
        assert back.tobytes() == w.tobytes()

    def test_size_mismatch(self):
        with pytest.raises(ValueError):
            unflatten_model(np.zeros(5), 2, 3)


class TestLibrary:
    def test_triplet_count(self):
        res = small_reservoir(n_nodes=10)
        sig = logistic_trajectory(3.7, 0.3, 1000)
        lib = build_meta_library(res, [sig], 50, 1e-6, 5, 1)
        assert lib.n_short == 946
        assert lib.index[0].tolist() == [0, 50] and lib.index[-1].tolist() == [0, 995]

    def test_stride(self):
        res = small_reservoir(n_nodes=10)
        lib = build_meta_library(res, [logistic_trajectory(3.7, 0.3, 100)], 10, 1e-6, 5, 7)
        assert lib.index[:, 1].tolist() == list(range(10, 96, 7))

    def test_short_signals_are_slices(self):
        _, lib = toy_library(n_sys=2)
        for t in lib.triplets():
            want = lib.long_signals[t.source_index].data[t.start:t.start + lib.n_test]
            assert t.short_signal.shape == (3, 2)
            assert t.short_signal.tobytes() == want.tobytes()

    def test_cold_starts_match_redrive(self):
        res, lib = toy_library()
        for t in lib.triplets():
            sig = lib.long_signals[t.source_index]
            redriven = drive_open_loop(res, None, sig.data[:t.start])[-1]
            assert t.cold_start.tobytes() == redriven.tobytes()

    def test_cold_start_at_zero(self):
        res, lib = toy_library(n_trans=0)
        assert not lib.triplet(0).cold_start.any()

    def test_flat_models_unflatten_exactly(self):
        _, lib = toy_library()
        for t in lib.triplets():
            w = unflatten_model(t.flat_model, 1, lib.n_nodes)
            assert w.tobytes() == lib.models[t.source_index].w_out.tobytes()

    def test_short_signal_error_names_index(self):
        res = small_reservoir(n_nodes=10)
        sigs = [logistic_trajectory(3.7, 0.3, 100), logistic_trajectory(3.8, 0.3, 20)]
        with pytest.raises(ValueError, match="long signal 1"):
            build_meta_library(res, sigs, 18, 1e-6, 5)

    def test_round_trip(self, tmp_path):
        _, lib = toy_library(n_sys=2)
        lib.save(tmp_path / "lib.bin")
        back = MetaLibrary.load(tmp_path / "lib.bin")
        assert back.member_hashes() == lib.member_hashes()
        assert back.index.tobytes() == lib.index.tobytes()
        for a, b in zip(back.trajectories, lib.trajectories):
            assert a.tobytes() == b.tobytes()

    def test_tampered_member_detected(self, tmp_path):
        import json
        _, lib = toy_library()
        lib.save(tmp_path / "lib.bin")
        side = tmp_path / "lib.bin.json"
        meta = json.loads(side.read_text())
        meta["member_hashes"][0] = "0" * 16
        side.write_text(json.dumps(meta))
        with pytest.raises(ValueError, match="member hashes"):
            MetaLibrary.load(tmp_path / "lib.bin")


class TestSignalMapper:
    def test_normal_equations_oracle(self):
        _, lib = toy_library(n_members=2, n_train=10, n_trans=3, n_test=3)
        assert lib.n_short == 10
        sm_res = small_reservoir(n_nodes=15, seed=7)
        mapper = train_signal_mapper(sm_res, lib, 1e-4)
        R = np.stack([drive_open_loop(sm_res, None, t.short_signal)[-1] for t in lib.triplets()]).T
        P = np.stack([np.concatenate([t.cold_start, t.flat_model]) for t in lib.triplets()]).T
        want = ridge_oracle(R, P, 1e-4)
        np.testing.assert_allclose(mapper.w_sm, want, rtol=1e-8, atol=1e-8 * np.abs(want).max())

    def test_repeated_triplet_recalled(self):
        _, lib = toy_library(n_members=1)
        rep = MetaLibrary(lib.forecaster_hash, lib.long_signals, lib.models, lib.trajectories,
                          np.repeat(lib.index[:1], 30, axis=0), lib.n_test, lib.n_trans)
        mapper = train_signal_mapper(small_reservoir(n_nodes=15, seed=3), rep, 1e-10)
        t = rep.triplet(0)
        tf = infer_tailored_forecaster(mapper, t.short_signal)
        want = np.concatenate([t.cold_start, t.flat_model])
        got = np.concatenate([tf.cold_start, flatten_model(tf.model)])
        assert np.linalg.norm(got - want) <= 1e-6 * np.linalg.norm(want)

    def test_output_dimension(self):
        forecaster, sm_res = table_reservoirs(0)
        lib = build_meta_library(forecaster, [logistic_trajectory(3.7, 0.3, 80)], 50, 1e-6, 5)
        mapper = train_signal_mapper(sm_res, lib, 1e-8)
        assert mapper.n_outputs == 1000
        assert mapper.w_sm.shape == (1000, 1000)

    def test_empty_library(self):
        _, lib = toy_library()
        empty = MetaLibrary(lib.forecaster_hash, lib.long_signals, lib.models, lib.trajectories,
                            np.empty((0, 2), dtype=np.int64), lib.n_test, lib.n_trans)
        with pytest.raises(ValueError):
            train_signal_mapper(small_reservoir(), empty, 1e-8)

    def test_input_mismatch(self):
        _, lib = toy_library(n_sys=2)
        with pytest.raises(ValueError):
            train_signal_mapper(small_reservoir(n_inputs=1), lib, 1e-8)

    def test_ablation_block_separability(self):
        _, lib = toy_library()
        sm_res = small_reservoir(n_nodes=15, seed=4)
        full = train_signal_mapper(sm_res, lib, 1e-6, MapperTargets.FULL)
        model_only = train_signal_mapper(sm_res, lib, 1e-6, MapperTargets.MODEL_ONLY)
        np.testing.assert_allclose(full.w_sm[lib.n_nodes:], model_only.w_sm, rtol=1e-12, atol=1e-14)

    def test_shared_drive_matches_separate(self):
        _, lib = toy_library(n_members=1)
        sm_res = small_reservoir(n_nodes=15, seed=4)
        both = train_signal_mappers(sm_res, lib, 1e-6, ["full", "cold_start_only"])
        single = train_signal_mapper(sm_res, lib, 1e-6, "cold_start_only")
        assert both[MapperTargets.COLD_START_ONLY].w_sm.tobytes() == single.w_sm.tobytes()

    def test_cold_start_only_keeps_model(self):
        res, lib = toy_library(n_members=1)
        mapper = train_signal_mapper(small_reservoir(n_nodes=15, seed=4), lib, 1e-6, "cold_start_only")
        tf = infer_tailored_forecaster(mapper, lib.triplet(3).short_signal)
        assert tf.model is lib.models[0]
        assert tf.cold_start.shape == (lib.n_nodes,)

    def test_cold_start_only_needs_single_member(self):
        _, lib = toy_library(n_members=2)
        with pytest.raises(ValueError):
            train_signal_mapper(small_reservoir(n_nodes=15), lib, 1e-6, "cold_start_only")

    def test_model_only_has_zero_start(self):
        _, lib = toy_library()
        mapper = train_signal_mapper(small_reservoir(n_nodes=15), lib, 1e-6, "model_only")
        assert not infer_tailored_forecaster(mapper, lib.triplet(0).short_signal).cold_start.any()

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 2**31))
    def test_permutation_invariance(self, seed):
        _, lib = toy_library(n_members=3, seed=seed % 1000)
        perm = np.random.default_rng(seed).permutation(lib.n_short)
        shuffled = MetaLibrary(lib.forecaster_hash, lib.long_signals, lib.models, lib.trajectories,
                               lib.index[perm], lib.n_test, lib.n_trans)
        sm_res = small_reservoir(n_nodes=15, seed=1)
        # A moderate alpha keeps the Gram matrix well conditioned, so summation
        # order is the only source of difference.
        a = train_signal_mapper(sm_res, lib, 1e-3).w_sm
        b = train_signal_mapper(sm_res, shuffled, 1e-3, chunk_size=7).w_sm
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-10 * np.abs(a).max())

    def test_round_trip(self, tmp_path):
        _, lib = toy_library(n_members=1)
        mapper = train_signal_mapper(small_reservoir(n_nodes=15), lib, 1e-6, "cold_start_only")
        mapper.save(tmp_path / "sm.bin")
        back = SignalMapper.load(tmp_path / "sm.bin")
        assert back.w_sm.tobytes() == mapper.w_sm.tobytes()
        assert back.targets is mapper.targets and back.n_test == mapper.n_test
        assert back.fixed_model.w_out.tobytes() == mapper.fixed_model.w_out.tobytes()
        assert back.reservoir.B.tobytes() == mapper.reservoir.B.tobytes()


class TestInference:
    def setup_method(self):
        self.forecaster, self.lib = toy_library()
        self.mapper = train_signal_mapper(small_reservoir(n_nodes=15, seed=5), self.lib, 1e-6)

    def test_cue_length_mismatch(self):
        with pytest.raises(ValueError, match="n_test"):
            infer_tailored_forecaster(self.mapper, np.zeros((4, 1)))

    def test_cue_component_mismatch(self):
        with pytest.raises(ValueError):
            infer_tailored_forecaster(self.mapper, np.zeros((3, 2)))

    def test_deterministic(self):
        cue = self.lib.triplet(4).short_signal
        a, b = infer_tailored_forecaster(self.mapper, cue), infer_tailored_forecaster(self.mapper, cue.copy())
        assert a.cold_start.tobytes() == b.cold_start.tobytes()
        assert a.model.w_out.tobytes() == b.model.w_out.tobytes()

    def test_batched_matches_single(self):
        cues = [self.lib.triplet(k).short_signal for k in range(5)]
        batch = infer_tailored_forecasters(self.mapper, cues)
        for cue, tf in zip(cues, batch):
            one = infer_tailored_forecaster(self.mapper, cue)
            np.testing.assert_array_equal(one.cold_start, tf.cold_start)

    def test_forecast_is_composition(self):
        cue = Series(self.lib.triplet(2).short_signal)
        tf = infer_tailored_forecaster(self.mapper, cue)
        want = synchronize_then_forecast(self.forecaster, tf.model, tf.cold_start, cue, 25)
        got = metafors_forecast(self.forecaster, self.mapper, cue, 25)
        assert got.data.tobytes() == want.data.tobytes()

    def test_wrong_forecaster(self):
        with pytest.raises(ValueError):
            metafors_forecast(small_reservoir(n_nodes=12, seed=99), self.mapper,
                              Series(self.lib.triplet(0).short_signal), 5)


class TestLogisticSetup:
    """Behavior at the logistic-library hyperparameters."""

    @staticmethod
    def fig2(seed):
        forecaster, sm_res = table_reservoirs(seed)
        sigs = [s for _, s in chaotic_map_library(MapKind.LOGISTIC, (3.7, 3.8), 5, seed)]
        lib = build_meta_library(forecaster, sigs, 50, 1e-6, 5)
        return forecaster, train_signal_mapper(sm_res, lib, 1e-8)

    def test_in_sample_recall(self):
        forecaster, sm_res = table_reservoirs(0)
        sig = logistic_trajectory(3.75, 0.3, 2000, 1000)[:150]
        lib = build_meta_library(forecaster, [sig], 50, 1e-6, 5)
        mapper = train_signal_mapper(sm_res, lib, 1e-8)
        for k in range(0, lib.n_short, 10):
            t = lib.triplet(k)
            tf = infer_tailored_forecaster(mapper, t.short_signal)
            flat = flatten_model(tf.model)
            assert np.linalg.norm(flat - t.flat_model) < 1e-2 * np.linalg.norm(t.flat_model)
            assert np.linalg.norm(tf.cold_start - t.cold_start) < 1e-2 * np.linalg.norm(t.cold_start)

    def test_unseen_parameter_stays_in_unit_interval(self):
        forecaster, mapper = self.fig2(0)
        cue = logistic_trajectory(3.75, 0.4, 1000)[995:]
        fc = metafors_forecast(forecaster, mapper, cue, 500)
        assert not fc.diverged
        assert np.all((fc.data >= 0) & (fc.data <= 1))

    @pytest.mark.slow
    def test_attractor_cdf_at_361(self):
        ks = []
        for seed in range(10):
            forecaster, mapper = self.fig2(seed)
            truth = logistic_trajectory(3.61, 0.3, 20000, 1000)
            fc = metafors_forecast(forecaster, mapper, truth[:5], 500)
            ks.append(ks_distance(fc.data, truth.data[5:]))
        assert np.median(ks) <= 0.15
