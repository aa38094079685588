import numpy as np
import pytest

from sca_stereo import autodiff as ad
from sca_stereo import geometry, losses
from sca_stereo.errors import UndefinedMetricError

from oracles import backward_warp_oracle, smooth_l1_oracle, ssim_oracle, stereo_consistency_oracle

VIEWS = ("left", "right")


def const_logits(value, shape=(1, 3, 4)):
    return {v: [ad.constant(np.full(shape, value))] for v in VIEWS}


class TestAdvGenerator:
    def test_constant_logits(self):
        loss = losses.adv_loss_generator(const_logits(0.3))
        assert loss.item() == pytest.approx(-0.6, abs=1e-12)

    def test_zero_logits(self):
        assert losses.adv_loss_generator(const_logits(0.0)).item() == 0.0

    def test_gradient_sign(self):
        logit = ad.tensor(np.zeros((1, 2, 2)), requires_grad=True)
        loss = losses.adv_loss_generator({"left": [logit], "right": [ad.constant(np.zeros((1, 2, 2)))]})
        ad.backward(loss)
        assert np.all(logit.grad < 0)  # increasing any logit decreases the loss


class TestAdvDiscriminator:
    def test_satisfied_real_margin(self):
        loss = losses.adv_loss_discriminator(
            const_logits(-2.0), const_logits(-2.0), const_logits(2.0)
        )
        assert loss.item() == 0.0

    def test_fake_logit_two(self):
        loss = losses.adv_loss_discriminator(
            const_logits(2.0), const_logits(-2.0), const_logits(2.0)
        )
        assert loss.item() == pytest.approx(6.0, abs=1e-12)  # max(0, 1+2) per fake view

    def test_zero_logits_count_terms(self):
        loss = losses.adv_loss_discriminator(
            const_logits(0.0), const_logits(0.0), const_logits(0.0)
        )
        assert loss.item() == pytest.approx(6.0, abs=1e-12)  # six view-terms of value 1


class TestStereoConsistency:
    def _setup(self, h=6, w=12, d=2.5):
        disp = {
            v: geometry.DisparityMap(ad.constant(np.full((h, w), d)), v) for v in VIEWS
        }
        masks = {
            v: geometry.occlusion_mask(disp[v], disp[geometry.other_view(v)]) for v in VIEWS
        }
        return disp, masks

    def test_identical_features_tiny_disparity(self):
        h, w = 4, 10
        eps = 1e-9
        rng = np.random.default_rng(0)
        f = ad.constant(rng.standard_normal((2, h, w)))
        disp = {v: geometry.DisparityMap(ad.constant(np.full((h, w), eps)), v) for v in VIEWS}
        masks = {v: geometry.occlusion_mask(disp[v], disp[geometry.other_view(v)]) for v in VIEWS}
        loss = losses.stereo_consistency_loss(
            {v: [(f, 1)] for v in VIEWS}, None, disp, masks
        )
        assert loss.item() <= 1e-6

    def test_shifted_features_zero_on_unmasked(self):
        h, w, d = 4, 16, 3
        rng = np.random.default_rng(1)
        base = rng.standard_normal((2, h, w + d))
        # left column i shows world x = i, right column k shows world x = k + d
        f_l = ad.constant(base[:, :, :w])
        f_r = ad.constant(base[:, :, d:])
        disp, masks = self._setup(h, w, float(d))
        loss = losses.stereo_consistency_loss(
            {"left": [(f_l, 1)], "right": [(f_r, 1)]}, None, disp, masks
        )
        assert loss.item() <= 1e-12

    def test_matches_brute_force_oracle(self):
        h, w = 5, 10
        rng = np.random.default_rng(2)
        feats = {v: [(ad.constant(rng.standard_normal((3, h, w))), 1)] for v in VIEWS}
        images = {v: ad.constant(rng.uniform(0, 1, (3, h, w))) for v in VIEWS}
        disp, masks = self._setup(h, w, 2.5)
        loss = losses.stereo_consistency_loss(feats, images, disp, masks)
        expected = stereo_consistency_oracle(
            {v: [(f.data, k) for f, k in feats[v]] for v in VIEWS},
            {v: images[v].data for v in VIEWS},
            {v: disp[v].values.data for v in VIEWS},
            {v: masks[v].mask.data for v in VIEWS},
        )
        assert abs(loss.item() - expected) <= 1e-12

    def test_empty_mask_contributes_zero(self):
        h, w = 3, 6
        rng = np.random.default_rng(3)
        feats = {v: [(ad.constant(rng.standard_normal((1, h, w))), 1)] for v in VIEWS}
        disp = {v: geometry.DisparityMap(ad.constant(np.full((h, w), 2.0)), v) for v in VIEWS}
        masks = {v: geometry.OcclusionMask(ad.constant(np.zeros((h, w))), v) for v in VIEWS}
        loss = losses.stereo_consistency_loss(feats, None, disp, masks)
        assert loss.item() == 0.0

    def test_mask_normalization_scale_free(self):
        # uniform per-pixel error: halving the mask area leaves the loss unchanged
        h, w = 4, 12
        f_l = ad.constant(np.zeros((1, h, w)))
        f_r = ad.constant(np.ones((1, h, w)))
        disp = {v: geometry.DisparityMap(ad.constant(np.full((h, w), 1e-12)), v) for v in VIEWS}
        losses_by_mask = []
        for cols in (w, w // 2):
            m = np.zeros((h, w))
            m[:, :cols] = 1.0
            masks = {v: geometry.OcclusionMask(ad.constant(m), v) for v in VIEWS}
            losses_by_mask.append(
                losses.stereo_consistency_loss(
                    {"left": [(f_l, 1)], "right": [(f_r, 1)]}, None, disp, masks
                ).item()
            )
        assert losses_by_mask[0] == pytest.approx(losses_by_mask[1], abs=1e-12)

    def test_warped_features_strictly_reduce_loss(self):
        h, w, d = 4, 14, 3.0
        rng = np.random.default_rng(4)
        f_l = ad.constant(rng.standard_normal((2, h, w)))
        f_r = ad.constant(rng.standard_normal((2, h, w)))
        disp, masks = self._setup(h, w, d)
        loose = losses.stereo_consistency_loss(
            {"left": [(f_l, 1)], "right": [(f_r, 1)]}, None, disp, masks
        ).item()
        # replace the left features by the ground-truth warp of the right view
        warped_l = ad.constant(
            backward_warp_oracle(f_r.data, -disp["left"].values.data)
        )
        tight = losses.stereo_consistency_loss(
            {"left": [(warped_l, 1)], "right": [(f_r, 1)]}, None, disp, masks
        ).item()
        assert tight < loose


class TestSmoothL1:
    def test_quadratic_branch(self):
        assert losses.smooth_l1(ad.constant(np.array(0.5))).item() == pytest.approx(0.125)

    def test_linear_branch(self):
        assert losses.smooth_l1(ad.constant(np.array(2.0))).item() == pytest.approx(1.5)

    def test_branch_boundary_continuous(self):
        assert losses.smooth_l1(ad.constant(np.array(1.0))).item() == pytest.approx(0.5)

    def test_matches_oracle(self):
        rng = np.random.default_rng(5)
        x = rng.uniform(-3, 3, (4, 7))
        out = losses.smooth_l1(ad.constant(x))
        assert np.max(np.abs(out.data - smooth_l1_oracle(x))) <= 1e-15


class TestDisparityLoss:
    def _gt(self, h=4, w=6, d=3.0):
        return {v: geometry.DisparityMap(ad.constant(np.full((h, w), d)), v) for v in VIEWS}

    def test_perfect_prediction(self):
        gts = self._gt()
        preds = {v: ad.constant(gts[v].values.data.copy()) for v in VIEWS}
        assert losses.disparity_loss(preds, gts).item() == 0.0

    def test_uniform_half_pixel_error(self):
        gts = self._gt()
        preds = {v: ad.constant(gts[v].values.data + 0.5) for v in VIEWS}
        assert losses.disparity_loss(preds, gts).item() == pytest.approx(0.25, abs=1e-12)

    def test_empty_valid_mask(self):
        h, w = 3, 3
        gts = {
            v: geometry.DisparityMap(
                ad.constant(np.ones((h, w))), v, ad.constant(np.zeros((h, w)))
            )
            for v in VIEWS
        }
        preds = {v: ad.constant(np.ones((h, w))) for v in VIEWS}
        with pytest.raises(UndefinedMetricError):
            losses.disparity_loss(preds, gts)


class TestSsim:
    def test_identical_images(self):
        rng = np.random.default_rng(6)
        a = ad.constant(rng.uniform(0, 1, (2, 6, 7)))
        out = losses.ssim(a, a)
        assert np.max(np.abs(out.data - 1.0)) <= 1e-12

    def test_bounded(self):
        rng = np.random.default_rng(7)
        a = ad.constant(rng.uniform(0, 1, (3, 8, 9)))
        b = ad.constant(rng.uniform(0, 1, (3, 8, 9)))
        out = losses.ssim(a, b)
        assert np.all(out.data >= -1.0 - 1e-12)
        assert np.all(out.data <= 1.0 + 1e-12)

    def test_matches_windowed_statistics_oracle(self):
        rng = np.random.default_rng(8)
        a = ad.constant(rng.uniform(0, 1, (2, 6, 8)))
        b = ad.constant(rng.uniform(0, 1, (2, 6, 8)))
        out = losses.ssim(a, b)
        assert np.max(np.abs(out.data - ssim_oracle(a.data, b.data))) <= 1e-12


class TestReprojection:
    def test_identical_views_zero_disparity(self):
        rng = np.random.default_rng(9)
        img = ad.constant(rng.uniform(0, 1, (3, 5, 8)))
        images = {"left": img, "right": img}
        preds = {v: ad.constant(np.zeros((5, 8))) for v in VIEWS}
        assert losses.reprojection_loss(images, preds).item() == pytest.approx(0.0, abs=1e-12)

    def test_alpha_zero_is_pure_l1(self):
        rng = np.random.default_rng(10)
        images = {v: ad.constant(rng.uniform(0, 1, (3, 5, 8))) for v in VIEWS}
        preds = {v: ad.constant(np.full((5, 8), 1.5)) for v in VIEWS}
        loss = losses.reprojection_loss(images, preds, alpha=0.0)
        expected = 0.0
        for b in VIEWS:
            m = geometry.other_view(b)
            sign = -1.0 if b == "left" else 1.0
            warped = backward_warp_oracle(images[m].data, sign * preds[b].data)
            expected += np.abs(images[b].data - warped).mean()
        assert loss.item() == pytest.approx(expected, abs=1e-12)

    def test_matches_direct_oracle(self):
        rng = np.random.default_rng(11)
        alpha = 0.85
        images = {v: ad.constant(rng.uniform(0, 1, (3, 6, 9))) for v in VIEWS}
        preds = {v: ad.constant(rng.uniform(0.5, 2.5, (6, 9))) for v in VIEWS}
        loss = losses.reprojection_loss(images, preds, alpha=alpha)
        expected = 0.0
        for b in VIEWS:
            m = geometry.other_view(b)
            sign = -1.0 if b == "left" else 1.0
            warped = backward_warp_oracle(images[m].data, sign * preds[b].data)
            l1 = np.abs(images[b].data - warped).mean()
            ssim_mean = ssim_oracle(images[b].data, warped).mean()
            expected += (1 - alpha) * l1 + (alpha / 2.0) * (1.0 - ssim_mean)
        assert loss.item() == pytest.approx(expected, abs=1e-12)


class TestPerceptual:
    def test_identical_images_zero(self):
        rng = np.random.default_rng(12)
        img = ad.constant(rng.uniform(0, 1, (3, 8, 8)))
        assert losses.perceptual_loss(img, img).item() == 0.0

    def test_symmetric(self):
        rng = np.random.default_rng(13)
        a = ad.constant(rng.uniform(0, 1, (3, 8, 8)))
        b = ad.constant(rng.uniform(0, 1, (3, 8, 8)))
        assert losses.perceptual_loss(a, b).item() == pytest.approx(
            losses.perceptual_loss(b, a).item(), abs=1e-15
        )

    def test_deterministic_frozen_features(self):
        rng = np.random.default_rng(14)
        a = ad.constant(rng.uniform(0, 1, (3, 8, 8)))
        b = ad.constant(rng.uniform(0, 1, (3, 8, 8)))
        assert losses.perceptual_loss(a, b).item() == losses.perceptual_loss(a, b).item()
        fresh = losses.PerceptualNet()
        assert losses.perceptual_loss(a, b, fresh).item() == pytest.approx(
            losses.perceptual_loss(a, b).item(), abs=1e-15
        )

    def test_feature_hook(self):
        calls = []

        def feature_fn(img):
            calls.append(1)
            return [ad.mulc(img, 2.0)]

        a = ad.constant(np.full((3, 2, 2), 0.25))
        b = ad.constant(np.full((3, 2, 2), 0.75))
        loss = losses.perceptual_loss(a, b, feature_fn)
        assert loss.item() == pytest.approx(1.0)
        assert len(calls) == 2


class TestFeatureMatching:
    def test_identical_inputs_zero(self):
        rng = np.random.default_rng(15)
        feats = [[ad.constant(rng.standard_normal((2, 3, 3)))]]
        assert losses.feature_matching_loss(feats, feats).item() == 0.0

    def test_non_negative(self):
        rng = np.random.default_rng(16)
        a = [[ad.constant(rng.standard_normal((2, 3, 3)))]]
        b = [[ad.constant(rng.standard_normal((2, 3, 3)))]]
        assert losses.feature_matching_loss(a, b).item() >= 0.0

    def test_matches_per_layer_oracle(self):
        rng = np.random.default_rng(17)
        a = [
            [ad.constant(rng.standard_normal((2, 3, 3))), ad.constant(rng.standard_normal((4, 2, 2)))],
            [ad.constant(rng.standard_normal((3, 3, 3)))],
        ]
        b = [
            [ad.constant(rng.standard_normal((2, 3, 3))), ad.constant(rng.standard_normal((4, 2, 2)))],
            [ad.constant(rng.standard_normal((3, 3, 3)))],
        ]
        loss = losses.feature_matching_loss(a, b)
        layer_means = [
            np.abs(x.data - y.data).mean() for sa, sb in zip(a, b) for x, y in zip(sa, sb)
        ]
        assert loss.item() == pytest.approx(np.mean(layer_means), abs=1e-12)

    def test_layer_count_mismatch(self):
        a = [[ad.constant(np.zeros((1, 2, 2)))]]
        b = [[ad.constant(np.zeros((1, 2, 2))), ad.constant(np.zeros((1, 2, 2)))]]
        with pytest.raises(ValueError):
            losses.feature_matching_loss(a, b)

    def test_real_branch_detached(self):
        fake = ad.tensor(np.ones((1, 2, 2)), requires_grad=True)
        real = ad.tensor(np.zeros((1, 2, 2)), requires_grad=True)
        loss = losses.feature_matching_loss([[fake]], [[real]])
        ad.backward(loss)
        assert fake.grad is not None
        assert real.grad is None


class TestFullObjective:
    def _components(self):
        return {
            "adv_g": ad.constant(np.array(2.0)),
            "adv_c": ad.constant(np.array(3.0)),
            "perc": ad.constant(np.array(0.5)),
            "feat": ad.constant(np.array(0.25)),
            "stereo": ad.constant(np.array(0.1)),
            "disp": ad.constant(np.array(4.0)),
            "reproj": ad.constant(np.array(1.5)),
        }

    def test_paper_weights_arithmetic(self):
        weights = losses.LossWeights()  # 1.0, 1.0, 10.0, 0.1, 1.0, alpha 0.85
        out = losses.full_objective(self._components(), weights)
        assert out["loss_G"].item() == pytest.approx(2.0 + 0.5 + 0.25 + 1.0, abs=1e-12)
        assert out["loss_C"].item() == pytest.approx(3.0)
        assert out["loss_E"].item() == pytest.approx(0.1 * 4.0 + 1.5, abs=1e-12)

    def test_zero_weights_endpoint(self):
        weights = losses.LossWeights(0.0, 0.0, 0.0, 0.0, 0.0, alpha=0.85)
        out = losses.full_objective(self._components(), weights)
        assert out["loss_E"].item() == 0.0
        assert out["loss_G"].item() == pytest.approx(2.0)

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            losses.LossWeights(lambda_perc=-1.0)

    def test_alpha_range(self):
        with pytest.raises(ValueError):
            losses.LossWeights(alpha=1.5)
