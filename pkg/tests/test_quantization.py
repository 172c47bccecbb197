import numpy as np
import pytest
from numpy.testing import assert_allclose

from micronnet.formats import FLOAT16, FLOAT32, fixed16_raw, narrow
from micronnet.network import (
    predict,
    Network,
    build,
    load,
    micronnet_default,
    parameter_shapes,
    save,
)
from micronnet.quantization import (
    parity_eval,
    quant_report_rows,
    quant_report_text,
    quantize,
    select_frac_bits,
    to_fixed16,
    to_float16,
)


def probe_batch(n=32, seed=0, shape=(3, 48, 48)):
    rng = np.random.default_rng(seed)
    return rng.uniform(0, 1, (n, *shape)).astype(np.float32)


def constant_net(value):
    spec = micronnet_default()
    params = tuple((np.full(ws, value, np.float32), np.full(bs, value, np.float32))
                   for ws, bs in parameter_shapes(spec))
    return Network(spec=spec, parameters=params)


class TestSelectFracBits:
    def test_capped_at_fourteen(self):
        assert select_frac_bits(np.array([0.9], np.float32)) == 14

    def test_unit_magnitude(self):
        assert select_frac_bits(np.array([1.0], np.float32)) == 14

    def test_larger_magnitudes(self):
        assert select_frac_bits(np.array([2.5], np.float32)) == 13
        assert select_frac_bits(np.array([100.0], np.float32)) == 8
        assert select_frac_bits(np.array([16000.0], np.float32)) == 1

    def test_all_zero_convention(self):
        assert select_frac_bits(np.zeros(5, np.float32)) == 14

    def test_no_saturation_guarantee(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            arr = (rng.standard_normal(64) * 10 ** rng.uniform(-3, 3)).astype(np.float32)
            f = select_frac_bits(arr)
            raw = np.rint(arr.astype(np.float64) * 2.0**f)
            assert raw.max() <= 32767 and raw.min() >= -32768

    def test_boundary_rounding_backs_off(self):
        # just under 2^11 but close enough that frac 4 would round to 32768
        arr = np.array([2047.97], np.float32)
        f = select_frac_bits(arr)
        assert np.rint(arr[0] * 2.0**f) <= 32767

    def test_rejects_out_of_range(self):
        # frac_bits = 1 tops out at 32767/2, so 20000 cannot be held
        with pytest.raises(ValueError):
            select_frac_bits(np.array([20000.0], np.float32))
        with pytest.raises(ValueError):
            select_frac_bits(np.array([np.nan], np.float32))


class TestToFloat16:
    def test_requires_float32_input(self):
        h = to_float16(build(micronnet_default(), seed=0))
        with pytest.raises(ValueError):
            to_float16(h)

    def test_spec_and_shapes_unchanged(self):
        net = build(micronnet_default(), seed=1)
        h = to_float16(net)
        assert h.spec == net.spec
        assert h.format == FLOAT16
        for (w, b), (hw, hb) in zip(net.parameters, h.parameters):
            assert hw.shape == w.shape and hb.shape == b.shape

    def test_exactly_representable_values_unchanged(self):
        net = constant_net(0.5)
        h = to_float16(net)
        for (w, b), (hw, hb) in zip(net.parameters, h.parameters):
            assert np.array_equal(hw, w)
            assert np.array_equal(hb, b)

    def test_relative_error_bound(self):
        net = build(micronnet_default(), seed=2)
        h = to_float16(net)
        for (w, _), (hw, _) in zip(net.parameters, h.parameters):
            assert np.abs(hw - w).max() <= 2.0**-11 * np.abs(w).max()


class TestToFixed16:
    def test_requires_float32_input(self):
        net = build(micronnet_default(), seed=0)
        q, _ = to_fixed16(net, probe_batch(8))
        with pytest.raises(ValueError):
            to_fixed16(q, probe_batch(8))

    def test_report_structure(self):
        net = build(micronnet_default(), seed=3)
        q, report = to_fixed16(net, probe_batch(16, seed=3))
        assert report.format_tag == "fixed16"
        assert len(report.tensors) == 2 * len(net.parameters)
        assert report.payload_bytes_before == 4 * 514_327
        assert report.payload_bytes_after == 2 * 514_327
        assert 0.0 <= report.agreement <= 1.0
        assert report.max_softmax_deviation >= 0.0

    def test_zero_bias_tensors_take_frac_14(self):
        net = build(micronnet_default(), seed=4)
        _, report = to_fixed16(net, probe_batch(4, seed=4))
        for t in report.tensors:
            if t.name.endswith(".bias"):
                assert t.frac_bits == 14  # init biases are all zero
                assert t.max_abs_err == 0.0

    def test_exact_grid_values_survive(self):
        net = constant_net(0.00390625)  # 2^-8, on every grid with frac >= 8
        q, report = to_fixed16(net, probe_batch(4, seed=5))
        for (w, b), (qw, qb) in zip(net.parameters, q.parameters):
            assert np.array_equal(qw, w)
            assert np.array_equal(qb, b)
        assert all(t.max_abs_err == 0.0 for t in report.tensors)

    def test_no_raw_saturation(self):
        net = build(micronnet_default(), seed=5)
        q, report = to_fixed16(net, probe_batch(4, seed=6))
        fracs = {t.name: t.frac_bits for t in report.tensors}
        for i, (qw, qb) in enumerate(q.parameters):
            for arr, part in ((qw, "weight"), (qb, "bias")):
                f = fracs[f"layer{i}.{part}"]
                raw = np.rint(arr.astype(np.float64) * 2.0**f)
                assert raw.max() <= 32767 and raw.min() >= -32768

    def test_quantization_error_bounded_by_half_step(self):
        net = build(micronnet_default(), seed=6)
        _, report = to_fixed16(net, probe_batch(4, seed=7))
        for t in report.tensors:
            assert t.max_abs_err <= 0.5 / 2.0**t.frac_bits + 1e-12
            assert t.mean_abs_err <= t.max_abs_err


class TestParityEval:
    def test_self_parity(self):
        net = build(micronnet_default(), seed=7)
        agreement, deviation = parity_eval(net, net, probe_batch(16, seed=8))
        assert agreement == 1.0
        assert deviation == 0.0

    def test_float16_high_agreement(self):
        net = build(micronnet_default(), seed=8)
        agreement, deviation = parity_eval(net, to_float16(net), probe_batch(64, seed=9))
        assert agreement >= 0.99
        assert deviation < 0.05

    def test_fixed16_agreement(self):
        net = build(micronnet_default(), seed=9)
        q, report = to_fixed16(net, probe_batch(64, seed=10))
        assert report.agreement >= 0.95

    def test_zeroed_classifier_control(self):
        # fresh nets collapse to a single predicted class, which would make
        # this control vacuous; memorizing random labels for a few hundred
        # iterations spreads the reference predictions across classes
        from micronnet.network import ArchitectureSpec, classifier_layer, conv_layer, fc_layer, pool_layer
        from micronnet.training import TrainConfig, train

        spec = ArchitectureSpec((3, 12, 12), (conv_layer(4, 5), pool_layer(3, 2),
                                              fc_layer(24), classifier_layer(43)))
        rng = np.random.default_rng(20)
        x = rng.uniform(0, 1, (128, 3, 12, 12)).astype(np.float32)
        y = rng.integers(0, 43, size=128)
        net, _ = train(build(spec, seed=11), x, y,
                       TrainConfig(max_iterations=300, batch_size=32, seed=0))
        probes = rng.uniform(0, 1, (64, 3, 12, 12)).astype(np.float32)
        assert len(np.unique(predict(net, probes))) > 5

        params = list(net.parameters)
        w, b = params[-1]
        params[-1] = (np.zeros_like(w), np.zeros_like(b))
        broken = Network(spec=net.spec, parameters=tuple(params))
        agreement, deviation = parity_eval(net, broken, probes)
        assert agreement < 0.2  # near chance 1/43
        assert deviation > 0.0


class TestReportRendering:
    def test_text_and_rows(self):
        net = build(micronnet_default(), seed=11)
        _, report = to_fixed16(net, probe_batch(8, seed=12))
        txt = quant_report_text(report)
        rows = quant_report_rows(report)
        assert "payload_bytes_after: 1028654" in txt
        assert "1028654" in rows
        assert "layer0.weight" in txt and "layer0.weight" in rows
        # one summary pair + blank + table header + one row per tensor
        assert len(rows.splitlines()) == 3 + len(report.tensors)

    def test_deterministic(self):
        net = build(micronnet_default(), seed=12)
        _, r1 = to_fixed16(net, probe_batch(8, seed=13))
        _, r2 = to_fixed16(net, probe_batch(8, seed=13))
        assert quant_report_text(r1) == quant_report_text(r2)
        assert quant_report_rows(r1) == quant_report_rows(r2)


class TestQuantize:
    def test_dispatch_matches_direct_paths(self):
        net = build(micronnet_default(), seed=5)
        probes = probe_batch(8, seed=6)

        qf, rf = quantize(net, "float16", probes)
        assert rf.format_tag == "float16"
        assert qf.format == FLOAT16
        assert len(rf.tensors) == 2 * len(net.parameters)
        assert all(t.frac_bits is None for t in rf.tensors)
        direct = to_float16(net)
        for (w1, b1), (w2, b2) in zip(qf.parameters, direct.parameters):
            assert np.array_equal(w1, w2) and np.array_equal(b1, b2)

        qx, rx = quantize(net, "fixed16", probes)
        dx, rdx = to_fixed16(net, probes)
        assert rx == rdx
        for (w1, b1), (w2, b2) in zip(qx.parameters, dx.parameters):
            assert np.array_equal(w1, w2) and np.array_equal(b1, b2)

    def test_float16_report_errors_match_rounding(self):
        net = build(micronnet_default(), seed=5)
        _, report = quantize(net, "float16", probe_batch(4, seed=7))
        row = report.tensors[0]
        assert row.name == "layer0.weight"
        w0 = net.parameters[0][0]
        expect = np.abs(narrow(w0, FLOAT16) - w0)
        assert_allclose(row.max_abs_err, expect.max(), rtol=0, atol=0)
        assert_allclose(row.mean_abs_err, expect.mean(), rtol=1e-7, atol=0)

    def test_unknown_format_rejected(self):
        net = build(micronnet_default(), seed=5)
        with pytest.raises(ValueError):
            quantize(net, "int8", probe_batch(2))

    def test_float16_report_renders(self):
        net = build(micronnet_default(), seed=5)
        _, report = quantize(net, "float16", probe_batch(4, seed=8))
        txt = quant_report_text(report)
        assert "format: float16" in txt
        rows = quant_report_rows(report)
        # frac_bits column stays empty for a float format
        assert "layer0.weight,," in rows


class TestQuantizedStorage:
    def test_fixed16_raw_round_trip(self):
        net = build(micronnet_default(), seed=13)
        q, report = to_fixed16(net, probe_batch(4, seed=14))
        # every quantized weight sits exactly on its tensor's grid
        fracs = {t.name: t.frac_bits for t in report.tensors}
        from micronnet.formats import Tensor, fixed16

        w0 = q.parameters[0][0]
        f = fracs["layer0.weight"]
        t = Tensor(w0, fixed16(f))
        raw = fixed16_raw(t)
        assert_allclose(raw.astype(np.float32) / 2.0**f, w0, rtol=0, atol=0)

    def test_mixed_grid_file_round_trip(self, tmp_path):
        # scale one tensor so its grid ends up coarser than the others',
        # then confirm the saved file restores every tensor bit-exactly
        net = build(micronnet_default(), seed=13)
        params = list(net.parameters)
        w0, b0 = params[0]
        params[0] = ((w0 * 40.0).astype(np.float32), b0)
        net = Network(spec=net.spec, parameters=tuple(params))
        q, report = to_fixed16(net, probe_batch(4, seed=14))
        assert len({t.frac_bits for t in report.tensors}) > 1
        p = tmp_path / "mixed.mnet"
        save(q, p)
        back = load(p)
        assert back.format == q.format
        for (w1, b1), (w2, b2) in zip(q.parameters, back.parameters):
            assert np.array_equal(w1, w2)
            assert np.array_equal(b1, b2)
