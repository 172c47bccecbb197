import struct

import numpy as np
import pytest
from numpy.testing import assert_allclose

from micronnet.errors import DimensionError, ModelFormatError, SpecError
from micronnet.formats import FLOAT16, FLOAT32, fixed16, narrow
from micronnet.network import (
    ArchitectureSpec,
    Network,
    backward,
    build,
    classifier_layer,
    conv_layer,
    fc_layer,
    forward,
    infer_shapes,
    load,
    micronnet_default,
    parameter_shapes,
    pool_layer,
    predict,
    save,
    spec_from_dict,
    spec_text,
    spec_to_dict,
    validate_network_spec,
)


def small_spec():
    """Shrunken stack for gradient checks: every layer kind represented."""
    return ArchitectureSpec(
        input_shape=(3, 12, 12),
        layers=(
            conv_layer(1, 1),
            conv_layer(4, 5),
            conv_layer(5, 3),
            pool_layer(3, 2),
            conv_layer(6, 3),
            fc_layer(10),
            classifier_layer(5),
        ),
    )


class TestSpecValidation:
    def test_default_shape_chain(self):
        shapes = infer_shapes(micronnet_default())
        assert shapes == [
            (3, 48, 48),
            (1, 48, 48),
            (29, 44, 44),
            (29, 22, 22),
            (59, 20, 20),
            (59, 10, 10),
            (74, 8, 8),
            (74, 4, 4),
            (300,),
            (300,),
            (43,),
        ]

    def test_default_flatten_width(self):
        shapes = infer_shapes(micronnet_default())
        assert int(np.prod(shapes[7])) == 1184

    def test_rejects_missing_classifier(self):
        spec = ArchitectureSpec((3, 8, 8), (conv_layer(2, 3), fc_layer(10)))
        with pytest.raises(SpecError):
            validate_network_spec(spec)

    def test_rejects_double_classifier(self):
        spec = ArchitectureSpec((3, 8, 8), (classifier_layer(4), classifier_layer(4)))
        with pytest.raises(SpecError):
            validate_network_spec(spec)

    def test_rejects_conv_after_flatten(self):
        with pytest.raises(SpecError):
            ArchitectureSpec((3, 8, 8), (fc_layer(10), conv_layer(2, 3), classifier_layer(4)))

    def test_rejects_oversized_conv(self):
        with pytest.raises(SpecError):
            ArchitectureSpec((3, 4, 4), (conv_layer(2, 5), classifier_layer(4)))

    def test_rejects_oversized_pool(self):
        with pytest.raises(SpecError):
            ArchitectureSpec((3, 2, 2), (pool_layer(3, 2), classifier_layer(4)))

    def test_rejects_bad_input_shape(self):
        with pytest.raises(SpecError):
            ArchitectureSpec((3, 0, 8), (classifier_layer(4),))

    def test_rejects_tiny_classifier(self):
        with pytest.raises(SpecError):
            classifier_layer(1)


class TestBuild:
    def test_deterministic(self):
        a = build(small_spec(), seed=42)
        b = build(small_spec(), seed=42)
        for (wa, ba), (wb, bb) in zip(a.parameters, b.parameters):
            assert np.array_equal(wa, wb)
            assert np.array_equal(ba, bb)

    def test_seed_changes_weights(self):
        a = build(small_spec(), seed=0)
        b = build(small_spec(), seed=1)
        assert not np.array_equal(a.parameters[1][0], b.parameters[1][0])

    def test_biases_zero(self):
        net = build(small_spec(), seed=3)
        for _, b in net.parameters:
            assert np.all(b == 0.0)

    def test_weight_std_tracks_fan_in(self):
        net = build(micronnet_default(), seed=7)
        shapes = parameter_shapes(micronnet_default())
        for (w, _), (ws, _) in zip(net.parameters, shapes):
            if w.size < 10_000:
                continue
            fan_in = int(np.prod(ws[1:])) if len(ws) == 4 else ws[0]
            want = np.sqrt(2.0 / fan_in)
            assert abs(w.std() - want) / want < 0.10

    def test_parameter_shapes_match_spec(self):
        net = build(micronnet_default(), seed=0)
        want = parameter_shapes(micronnet_default())
        got = [(w.shape, b.shape) for w, b in net.parameters]
        assert got == want

    def test_network_rejects_wrong_shapes(self):
        net = build(small_spec(), seed=0)
        params = list(net.parameters)
        w0, b0 = params[0]
        params[0] = (np.zeros((2, 3, 1, 1), np.float32), b0)
        with pytest.raises(SpecError):
            Network(spec=net.spec, parameters=tuple(params))


class TestForward:
    def test_default_output_is_distribution(self):
        net = build(micronnet_default(), seed=0)
        rng = np.random.default_rng(0)
        x = rng.uniform(0, 1, (2, 3, 48, 48)).astype(np.float32)
        probs = forward(net, x)
        assert probs.shape == (2, 43)
        assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)
        assert np.all(probs >= 0)

    def test_deterministic_bits(self):
        net = build(small_spec(), seed=5)
        rng = np.random.default_rng(1)
        x = rng.uniform(0, 1, (4, 3, 12, 12)).astype(np.float32)
        assert np.array_equal(forward(net, x), forward(net, x))

    def test_finite_on_unit_inputs(self):
        net = build(micronnet_default(), seed=11)
        rng = np.random.default_rng(2)
        x = rng.uniform(0, 1, (3, 3, 48, 48)).astype(np.float32)
        probs = forward(net, x)
        assert np.all(np.isfinite(probs))

    def test_rejects_wrong_input_shape(self):
        net = build(small_spec(), seed=0)
        with pytest.raises(DimensionError):
            forward(net, np.zeros((1, 3, 10, 10), np.float32))

    def test_predict_matches_argmax(self):
        net = build(small_spec(), seed=9)
        rng = np.random.default_rng(3)
        x = rng.uniform(0, 1, (6, 3, 12, 12)).astype(np.float32)
        assert np.array_equal(predict(net, x), forward(net, x).argmax(axis=1))


class TestBackward:
    def test_zero_weights_uniform_loss(self):
        spec = micronnet_default()
        params = tuple((np.zeros(ws, np.float32), np.zeros(bs, np.float32))
                       for ws, bs in parameter_shapes(spec))
        net = Network(spec=spec, parameters=params)
        x = np.zeros((2, 3, 48, 48), np.float32)
        _, loss = backward(net, x, np.array([0, 42]))
        assert loss == pytest.approx(np.log(43.0), rel=1e-6)

    def test_gradients_match_finite_differences(self):
        from gradcheck import check_network_gradients

        rel, checked, _ = check_network_gradients(small_spec(), seed=0, per_tensor=25)
        assert rel < 1e-3
        assert checked > 50

    def test_duplicating_batch_keeps_gradients(self):
        spec = small_spec()
        net = build(spec, seed=4)
        rng = np.random.default_rng(5)
        x = rng.uniform(0, 1, (3, 3, 12, 12)).astype(np.float32)
        labels = np.array([0, 2, 4])
        g1, l1 = backward(net, x, labels)
        g2, l2 = backward(net, np.concatenate([x, x]), np.concatenate([labels, labels]))
        assert l1 == pytest.approx(l2, rel=1e-5)
        for (gw1, gb1), (gw2, gb2) in zip(g1, g2):
            assert_allclose(gw1, gw2, rtol=1e-4, atol=1e-7)
            assert_allclose(gb1, gb2, rtol=1e-4, atol=1e-7)

    def test_rejects_label_out_of_range(self):
        net = build(small_spec(), seed=0)
        x = np.zeros((1, 3, 12, 12), np.float32)
        with pytest.raises(ValueError):
            backward(net, x, np.array([5]))


class TestSaveLoad:
    def test_round_trip_bit_exact(self, tmp_path):
        net = build(small_spec(), seed=8)
        p = tmp_path / "net.mnet"
        save(net, p)
        back = load(p)
        assert back.spec == net.spec
        assert back.format == net.format
        for (w1, b1), (w2, b2) in zip(net.parameters, back.parameters):
            assert np.array_equal(w1, w2)
            assert np.array_equal(b1, b2)

    def test_save_load_save_identical_bytes(self, tmp_path):
        net = build(small_spec(), seed=8)
        p1, p2 = tmp_path / "a.mnet", tmp_path / "b.mnet"
        save(net, p1)
        save(load(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_float16_payload_size(self, tmp_path):
        net = build(micronnet_default(), seed=0)
        params = tuple((narrow(w, FLOAT16), narrow(b, FLOAT16)) for w, b in net.parameters)
        hnet = Network(spec=net.spec, parameters=params, format=FLOAT16)
        p = tmp_path / "h.mnet"
        save(hnet, p)
        blob = p.read_bytes()
        _, hlen = struct.unpack("<II", blob[4:12])
        payload = len(blob) - 12 - hlen
        assert payload == 2 * 514_327

    def test_fixed16_round_trip(self, tmp_path):
        fmt = fixed16(12)
        net = build(small_spec(), seed=2)
        params = tuple((narrow(w, fmt), narrow(b, fmt)) for w, b in net.parameters)
        qnet = Network(spec=net.spec, parameters=params, format=fmt)
        p = tmp_path / "q.mnet"
        save(qnet, p)
        back = load(p)
        assert back.format == fmt
        for (w1, b1), (w2, b2) in zip(qnet.parameters, back.parameters):
            assert np.array_equal(w1, w2)
            assert np.array_equal(b1, b2)

    def test_save_rejects_off_grid_values(self, tmp_path):
        net = build(small_spec(), seed=2)
        offgrid = Network(spec=net.spec, parameters=net.parameters, format=FLOAT16)
        with pytest.raises(ModelFormatError):
            save(offgrid, tmp_path / "bad.mnet")

    def test_load_rejects_bad_magic(self, tmp_path):
        p = tmp_path / "junk.mnet"
        p.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(ModelFormatError):
            load(p)

    def test_load_rejects_bad_version(self, tmp_path):
        net = build(small_spec(), seed=1)
        p = tmp_path / "v.mnet"
        save(net, p)
        blob = bytearray(p.read_bytes())
        blob[4:8] = struct.pack("<I", 99)
        p.write_bytes(bytes(blob))
        with pytest.raises(ModelFormatError):
            load(p)

    def test_load_rejects_truncation(self, tmp_path):
        net = build(small_spec(), seed=1)
        p = tmp_path / "t.mnet"
        save(net, p)
        p.write_bytes(p.read_bytes()[:-10])
        with pytest.raises(ModelFormatError):
            load(p)

    def test_load_rejects_mismatched_shapes(self, tmp_path):
        net = build(small_spec(), seed=1)
        p = tmp_path / "m.mnet"
        save(net, p)
        blob = p.read_bytes()
        # first tensor declares (1, 3, 1, 1); corrupt it in place
        assert blob.count(b'{"shape":[1,3,1,1]}') == 1
        p.write_bytes(blob.replace(b'{"shape":[1,3,1,1]}', b'{"shape":[2,3,1,1]}'))
        with pytest.raises(ModelFormatError):
            load(p)


class TestSpecSerialization:
    def test_dict_round_trip(self):
        spec = micronnet_default()
        assert spec_from_dict(spec_to_dict(spec)) == spec

    def test_from_dict_rejects_garbage(self):
        with pytest.raises(SpecError):
            spec_from_dict({"input_shape": [3, 8, 8], "layers": [{"kind": "dropout"}]})
        with pytest.raises(SpecError):
            spec_from_dict({"layers": []})

    def test_text_form(self):
        txt = spec_text(micronnet_default())
        lines = txt.splitlines()
        assert len(lines) == 1 + 10
        assert "conv" in lines[1]
        assert "1 x 1184" in txt  # the flatten width feeding the first fc
        assert lines[-1].startswith("softmax")
        assert "43" in lines[-1]
