import os
import subprocess
import sys

import numpy as np
import pytest

from spekt import (
    CompressiveSensingReconstructor,
    FiberModel,
    Rng,
    TikhonovReconstructor,
    generate_array,
    parse_script,
    run_multifiber_stream,
    run_stream,
    simulate_wavelength_switch,
)
from spekt.errors import ConfigError
from spekt.pipeline import render_frame

N_CHANNELS = 12


@pytest.fixture(scope="module")
def array():
    return generate_array(Rng(81), 4, FiberModel(n_modes=36), roi_shape=(6, 6),
                          n_channels=N_CHANNELS, grid_layout=(2, 2))


@pytest.fixture(scope="module")
def tr_recons(array):
    return [TikhonovReconstructor(f).fit() for f in array.fibers]


class TestScript:
    def test_parse_and_weights(self):
        script = parse_script("0 5 3\n5 8 1:0.5,2:0.5\n")
        spectra = script.spectra(8, N_CHANNELS)
        assert spectra[0, 3] == 1.0
        # switch frame blends both segments 50/50
        np.testing.assert_allclose(spectra[5], 0.5 * spectra[4] + 0.5 * spectra[7])
        assert spectra[6, 1] == 0.5 and spectra[6, 2] == 0.5

    def test_gap_rejected(self):
        script = parse_script("0 3 1\n5 8 2\n")
        with pytest.raises(ConfigError, match="gap"):
            script.spectra(8, N_CHANNELS)

    def test_short_script_rejected(self):
        script = parse_script("0 3 1\n")
        with pytest.raises(ConfigError, match="covers"):
            script.spectra(10, N_CHANNELS)

    def test_channel_out_of_range(self):
        script = parse_script("0 4 99\n")
        with pytest.raises(ConfigError):
            script.spectra(4, N_CHANNELS)

    def test_malformed_line(self):
        with pytest.raises(ConfigError):
            parse_script("0 4\n")


class TestFrames:
    def test_render_frame_places_fibers(self, array):
        s = np.zeros(N_CHANNELS)
        s[2] = 1.0
        frame = render_frame(array, s)
        h, w = array.roi_shape
        for i, fiber in enumerate(array.fibers):
            r0, c0 = array.fiber_origin(i)
            np.testing.assert_array_equal(
                frame[r0 : r0 + h, c0 : c0 + w], fiber.matrix[:, 2].reshape(h, w)
            )

    def test_simulate_switch_two_components(self, array):
        packets, truth = simulate_wavelength_switch(array, "0 3 0\n3 6 5\n", 6)
        assert len(packets) == 6
        assert truth[2, 0] == 1.0 and truth[2, 5] == 0.0
        assert truth[3, 0] == 0.5 and truth[3, 5] == 0.5
        assert truth[4, 5] == 1.0


class TestRunStream:
    def test_output_matches_per_fiber_predictions(self, array, tr_recons):
        packets, truth = simulate_wavelength_switch(array, "0 4 1\n", 4)
        result = run_stream(array, tr_recons, packets, workers=1)
        h, w = array.roi_shape
        rows, cols = array.grid_layout
        for f in range(4):
            for i in range(array.n_fibers):
                r0, c0 = array.fiber_origin(i)
                crop = packets[f].frame[r0 : r0 + h, c0 : c0 + w]
                expected = tr_recons[i].predict_one(crop.copy())
                np.testing.assert_allclose(result.spectra[f, i], expected, rtol=1e-12)
                r, c = divmod(i, cols)
                np.testing.assert_array_equal(
                    result.hyperspectral[f, :, r, c], result.spectra[f, i]
                )

    def test_parallel_bit_identical_to_sequential(self, array, tr_recons):
        packets, _ = simulate_wavelength_switch(array, "0 6 2\n", 6)
        seq = run_stream(array, tr_recons, packets, workers=1)
        par = run_stream(array, tr_recons, packets, workers=2)
        np.testing.assert_array_equal(seq.spectra, par.spectra)
        np.testing.assert_array_equal(seq.hyperspectral, par.hyperspectral)

    def test_reconstructor_count_checked(self, array, tr_recons):
        packets, _ = simulate_wavelength_switch(array, "0 2 0\n", 2)
        with pytest.raises(ConfigError):
            run_stream(array, tr_recons[:-1], packets)

    def test_single_wavelength_energy_concentrates(self, array, tr_recons):
        packets, _ = simulate_wavelength_switch(array, "0 3 7\n", 3)
        result = run_stream(array, tr_recons, packets)
        mean_spectrum = result.spectra.mean(axis=(0, 1))
        assert mean_spectrum.argmax() == 7
        assert mean_spectrum[7] > 3 * np.sort(mean_spectrum)[-2]

    def test_scripted_ramp_tracks_channel(self, array, tr_recons):
        script = "\n".join(f"{i} {i + 1} {i}" for i in range(8))
        packets, truth = simulate_wavelength_switch(array, script, 8)
        result = run_stream(array, tr_recons, packets)
        for f in range(8):
            dominant_true = truth[f].argmax()
            dominant_rec = result.spectra[f].mean(axis=0).argmax()
            assert abs(int(dominant_rec) - int(dominant_true)) <= 1

    def test_timing_profile_integrity(self, array, tr_recons):
        packets, _ = simulate_wavelength_switch(array, "0 5 0\n", 5)
        result = run_stream(array, tr_recons, packets, workers=1)
        t = result.timing
        assert t.n_frames == 5 and t.n_fibers == 4
        assert t.preprocess_s >= 0 and t.inference_s > 0
        # single worker: busy time cannot exceed wall time (+ slack)
        assert t.preprocess_s + t.inference_s <= t.wall_s * 1.05 + 1e-3
        assert t.per_fiber_inference_s > 0
        rows = t.stage_rows()
        assert {r["stage"] for r in rows} == {"synthesize", "preprocess", "inference",
                                              "assemble", "total"}

    def test_cs_backend_runs(self, array):
        recons = [CompressiveSensingReconstructor(f, max_iters=50).fit() for f in array.fibers]
        packets, _ = simulate_wavelength_switch(array, "0 2 3\n", 2)
        result = run_stream(array, recons, packets)
        assert result.spectra.shape == (2, 4, N_CHANNELS)


_SCALING_CODE = """
import json
import numpy as np
from spekt import CnnReconstructor, DenseSampler, FiberModel, FramePacket, Rng
from spekt import generate_array, run_stream
from spekt.pipeline import render_frame

# 16 compact nets: the weight set stays cache-resident, so worker threads
# scale on compute instead of fighting over memory bandwidth.
array = generate_array(Rng(5), 16, FiberModel(n_modes=24), roi_shape=(5, 5),
                       n_channels=43)
recons = [CnnReconstructor.with_random_weights((5, 5), arch="small", seed=i)
          for i in range(16)]
spectrum = DenseSampler().sample(Rng(6).generator, 43)
frame = render_frame(array, spectrum)
packets = [FramePacket(frame=frame, timestamp=float(f), sequence=f)
           for f in range(400)]
walls = {}
for workers in (1, 2, 4):
    result = run_stream(array, recons, packets, workers=workers)
    walls[workers] = result.timing.wall_s
print(json.dumps(walls))
"""


@pytest.mark.acceptance
def test_worker_throughput_scaling():
    """Throughput grows with workers (BLAS pinned to one thread per worker).

    The near-linear 1-to-4-worker claim needs at least 4 physical cores;
    hosts with fewer cores check the 2-worker point only.
    """
    cpus = os.cpu_count() or 1
    if cpus < 2:
        pytest.skip("needs at least 2 CPU cores")
    env = dict(os.environ, OPENBLAS_NUM_THREADS="1", OMP_NUM_THREADS="1")
    result = subprocess.run([sys.executable, "-c", _SCALING_CODE], env=env,
                            capture_output=True, text=True, timeout=600)
    assert result.returncode == 0, result.stderr
    import json

    walls = {int(k): v for k, v in json.loads(result.stdout.strip().splitlines()[-1]).items()}
    speedup2 = walls[1] / walls[2]
    assert speedup2 >= 1.4, f"2-worker speedup {speedup2:.2f}"
    if cpus >= 4:
        speedup4 = walls[1] / walls[4]
        assert speedup4 >= 3.0, f"4-worker speedup {speedup4:.2f}"
    else:
        print(f"\n(2 cores: 4-worker near-linear scaling not assertable; "
              f"2-worker speedup {speedup2:.2f}x)")


class TestMultiFiberStream:
    def test_partition_validation(self, array):
        packets, _ = simulate_wavelength_switch(array, "0 2 0\n", 2)
        with pytest.raises(ConfigError):
            run_multifiber_stream(array, [], 3, packets)

    def test_grouped_equals_predict(self, array):
        from spekt import MultiFiberCnnReconstructor, build_multifiber_dataset
        from spekt.synth import DenseSampler

        ds = build_multifiber_dataset(array.fibers, DenseSampler(), 300,
                                      split=(240, 30, 30), rng=Rng(82))
        net = MultiFiberCnnReconstructor(4, n_channels=N_CHANNELS, epochs=3, seed=5,
                                         head_length=5, head_channels=4)
        net.fit(*ds.train, validation_data=ds.val)
        packets, _ = simulate_wavelength_switch(array, "0 3 2\n", 3)
        result = run_multifiber_stream(array, [net], 4, packets)
        h, w = array.roi_shape
        stack = np.empty((h, w, 4))
        for i in range(4):
            r0, c0 = array.fiber_origin(i)
            stack[:, :, i] = packets[0].frame[r0 : r0 + h, c0 : c0 + w]
        expected = net.predict_one(stack).reshape(4, N_CHANNELS)
        np.testing.assert_allclose(result.spectra[0], expected, rtol=2e-4, atol=2e-5)
