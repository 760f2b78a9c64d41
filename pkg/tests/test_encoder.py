import pytest
import torch

from meshfeedback.config import paper_spec, toy_spec
from meshfeedback.encoder import FeaturePyramid, PyramidEncoder
from meshfeedback.errors import ConfigurationError
from meshfeedback.losses import LossWeights, aux_loss


def build(spec):
    return PyramidEncoder(image_size=spec.image_size, channels=spec.channels,
                          global_channels=spec.global_channels,
                          trunk_channels=spec.trunk_channels,
                          deconv_strides=spec.deconv_strides, n_parts=spec.n_parts)


@pytest.fixture(scope="module")
def toy_encoder():
    torch.manual_seed(0)
    return build(toy_spec())


class TestShapes:
    def test_toy_pyramid_4_8_16(self, toy_encoder):
        pyr = toy_encoder.encode(torch.rand(2, 3, 64, 64))
        assert [m.shape[-1] for m in pyr.maps] == [4, 8, 16]
        assert pyr.channels == 64 and pyr.levels == 3

    def test_paper_pyramid_14_28_56(self):
        spec = paper_spec()
        enc = build(spec)
        pyr = enc.encode(torch.rand(1, 3, 224, 224))
        assert [m.shape[-1] for m in pyr.maps] == [14, 28, 56]
        assert pyr.channels == 256

    def test_global_lengths(self, toy_encoder):
        out = toy_encoder.encode_global(torch.rand(2, 3, 64, 64))
        assert out.shape == (2, 256)

    def test_wrong_input_shape(self, toy_encoder):
        with pytest.raises(ConfigurationError):
            toy_encoder.encode(torch.rand(1, 3, 32, 32))
        with pytest.raises(ConfigurationError):
            toy_encoder.encode(torch.rand(1, 1, 64, 64))

    def test_single_image_accepted(self, toy_encoder):
        pyr = toy_encoder.encode(torch.rand(3, 64, 64))
        assert pyr.maps[0].shape[0] == 1


class TestDeterminism:
    def test_inference_repeatable(self, toy_encoder):
        toy_encoder.eval()
        img = torch.rand(2, 3, 64, 64)
        with torch.no_grad():
            a = toy_encoder.encode(img)
            b = toy_encoder.encode(img)
        for ma, mb in zip(a.maps, b.maps):
            assert torch.equal(ma, mb)


class TestGlobalPool:
    def test_constant_map(self):
        fmap = torch.full((2, 5, 4, 4), 3.25)
        out = PyramidEncoder.global_pool(fmap)
        assert torch.allclose(out, torch.full((2, 5), 3.25))

    def test_permutation_invariant(self, rng):
        fmap = torch.as_tensor(rng.normal(size=(1, 6, 4, 4)), dtype=torch.float32)
        flat = fmap.reshape(1, 6, 16)
        perm = torch.as_tensor(rng.permutation(16))
        shuffled = flat[:, :, perm].reshape(1, 6, 4, 4)
        assert torch.allclose(PyramidEncoder.global_pool(fmap),
                              PyramidEncoder.global_pool(shuffled), atol=1e-6)


class TestIUVHead:
    def test_channel_count_and_size(self, toy_encoder):
        pyr = toy_encoder.encode(torch.rand(2, 3, 64, 64))
        logits = toy_encoder.predict_iuv(pyr)
        assert logits.shape == (2, toy_encoder.n_parts + 3, 16, 16)

    def test_aux_gradient_reaches_trunk(self):
        torch.manual_seed(1)
        spec = toy_spec()
        enc = build(spec)
        enc.train()
        img = torch.rand(2, 3, 64, 64)
        logits = enc.predict_iuv(enc.encode(img))
        gt_part = torch.randint(0, spec.n_parts + 1, (2, 16, 16))
        gt_u = torch.rand(2, 16, 16)
        gt_v = torch.rand(2, 16, 16)
        loss = aux_loss(logits, gt_part, gt_u, gt_v, LossWeights())
        loss.backward()
        first_conv = enc.trunk[0][0].weight
        assert first_conv.grad is not None
        assert first_conv.grad.abs().max() > 0


class TestInvariants:
    def test_toy_parameter_count_under_2m(self, toy_encoder):
        n = sum(p.numel() for p in toy_encoder.parameters())
        assert n < 2_000_000

    def test_pyramid_monotonicity_enforced(self):
        good = [torch.zeros(1, 4, 4, 4), torch.zeros(1, 4, 8, 8)]
        FeaturePyramid(maps=good)
        with pytest.raises(ConfigurationError):
            FeaturePyramid(maps=list(reversed(good)))
        with pytest.raises(ConfigurationError):
            FeaturePyramid(maps=[torch.zeros(1, 4, 4, 4), torch.zeros(1, 8, 8, 8)])

    def test_presets_monotone(self):
        for spec in (toy_spec(), paper_spec()):
            sizes = spec.pyramid_sizes
            assert all(b > a for a, b in zip(sizes, sizes[1:]))
