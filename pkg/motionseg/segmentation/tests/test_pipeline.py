from dataclasses import replace

import numpy as np

from django.test import SimpleTestCase, override_settings

from motionseg.segmentation import constants
from motionseg.segmentation.clustering import background_label, render_segmentation
from motionseg.segmentation.evaluation import adjusted_rand, prf_metrics
from motionseg.segmentation.exceptions import ValidationError
from motionseg.segmentation.pipeline import RunConfig, SegmentationService, segmentation_service
from motionseg.segmentation.synthetic import build_sequence, emit_sequence, preset

from .factories import TempDirMixin


def run(name, k, sigma_flow=0.0, sigma_depth_rel=0.0, noise_seed=0, **options):
    seq, truth = build_sequence(preset(name), sigma_flow, sigma_depth_rel, seed=noise_seed)
    result = segmentation_service.run(seq, RunConfig(num_motions=k, **options))
    return result, seq, truth


class RunConfigTests(SimpleTestCase):

    def test_validation(self):
        bad = [
            {'num_motions': 0},
            {'num_motions': 2, 'ablation': 'everything'},
            {'num_motions': 2, 'motion_model': 'cubic'},
            {'num_motions': 2, 'ork_fraction': 0.0},
            {'num_motions': 2, 'inliers': 0},
            {'num_motions': 2, 'iou_threshold': 1.5},
            {'num_motions': 2, 'threads': 0},
            {'num_motions': 2, 'binary': True, 'ablation': constants.ABLATION_PROPOSALS},
        ]
        for options in bad:
            with self.assertRaises(ValidationError, msg=str(options)):
                RunConfig(**options)

    def test_flow_only_uses_quadratic_model(self):
        config = RunConfig(num_motions=2, ablation=constants.ABLATION_FLOW_ONLY)
        self.assertEqual(config.effective_model, constants.MODEL_QUADRATIC)
        self.assertEqual(config.to_dict()['motion_model'], constants.MODEL_QUADRATIC)

    @override_settings(MOTIONSEG={'ORK_FRACTION': 0.5, 'SEED': 7})
    def test_from_settings(self):
        config = RunConfig.from_settings(num_motions=3, seed=None, manifest='clip/manifest.yaml')
        self.assertEqual(config.ork_fraction, 0.5)
        self.assertEqual(config.seed, 7)
        self.assertEqual(config.manifest.name, 'manifest.yaml')
        self.assertEqual(RunConfig.from_settings(num_motions=3, seed=1).seed, 1)


class OracleTests(SimpleTestCase):

    def test_two_movers(self):
        result, _, truth = run('two-movers', 3)
        self.assertEqual(adjusted_rand(result.labeling, truth), 1.0)

    def test_rotor(self):
        result, _, truth = run('rotor', 2)
        self.assertEqual(adjusted_rand(result.labeling, truth), 1.0)

    def test_shared_motion(self):
        result, _, truth = run('shared-motion', 2)
        self.assertEqual(adjusted_rand(result.labeling, truth), 1.0)

    def test_noisy_two_movers(self):
        scores = [
            adjusted_rand(result.labeling, truth)
            for result, _, truth in (
                run('two-movers', 3, sigma_flow=0.1, sigma_depth_rel=0.05, noise_seed=trial, seed=trial)
                for trial in range(20)
            )
        ]
        self.assertGreaterEqual(float(np.mean(scores)), 0.9)

    def test_background_is_the_static_group(self):
        result, _, truth = run('two-movers', 3)
        static = result.labeling.group_of(1)  # sky
        self.assertEqual(result.labeling.background_group, static)
        self.assertEqual(result.labeling.group_of(3), static)


class ParallaxTests(SimpleTestCase):

    def test_depth_separates_mover_and_flow_alone_does_not(self):
        for seed in range(10):
            depth, _, truth = run('parallax-trap', 2, seed=seed)
            flow_only, _, _ = run('parallax-trap', 2, seed=seed, ablation=constants.ABLATION_FLOW_ONLY)
            depth_ari = adjusted_rand(depth.labeling, truth)
            flow_ari = adjusted_rand(flow_only.labeling, truth)
            self.assertEqual(depth_ari, 1.0)
            self.assertLessEqual(flow_ari, 0.5)
            self.assertGreater(depth_ari, flow_ari)

    def test_static_layers_form_one_group(self):
        result, _, truth = run('parallax-static', 1)
        self.assertEqual(adjusted_rand(result.labeling, truth), 1.0)
        self.assertTrue(np.all(result.similarity.values > 0))

        quadratic, _, _ = run('parallax-static', 1, motion_model=constants.MODEL_QUADRATIC)
        self.assertTrue(np.any(quadratic.similarity.values == 0))

    def test_proposals_baseline_trades_precision(self):
        seq, truth = build_sequence(preset('parallax-trap'))
        gt_frames = [f.labels for f in render_segmentation(truth, seq)]
        gt_background = background_label(truth)

        def scores(config):
            result = segmentation_service.run(seq, config)
            pred = [f.labels for f in result.frames]
            return prf_metrics(pred, gt_frames, background_label(result.labeling), gt_background)

        baseline = scores(RunConfig(num_motions=1, ablation=constants.ABLATION_PROPOSALS))
        full = scores(RunConfig(num_motions=2))
        self.assertEqual(baseline.ru, 1.0)
        self.assertEqual(full.ru, 1.0)
        self.assertLess(baseline.pu, full.pu)
        self.assertEqual(full.pu, 1.0)


class InvarianceTests(TempDirMixin, SimpleTestCase):

    def test_depth_scale_does_not_change_the_partition(self):
        seq, _ = build_sequence(preset('two-movers'))
        reference = segmentation_service.run(seq, RunConfig(num_motions=3)).labeling
        for scale in (0.1, 3.0, 50.0):
            depths = [replace(d, data=d.data * np.float32(scale)) for d in seq.depths]
            scaled = segmentation_service.run(replace(seq, depths=depths), RunConfig(num_motions=3))
            self.assertEqual(scaled.labeling, reference)

    def test_threads_do_not_change_the_result(self):
        seq, _ = build_sequence(preset('rotor'), sigma_flow=0.1, seed=3)
        single = segmentation_service.run(seq, RunConfig(num_motions=2))
        pooled = SegmentationService().run(seq, RunConfig(num_motions=2, threads=4))
        self.assertEqual(pooled.labeling, single.labeling)
        np.testing.assert_array_equal(pooled.similarity.values, single.similarity.values)

    def test_inlier_override(self):
        result, _, _ = run('rotor', 2, inliers=5)
        np.testing.assert_array_equal(result.similarity.values, np.ones((5, 5)))

    def test_segment_manifest_is_reproducible(self):
        manifest = emit_sequence(preset('two-movers'), self.tmp / 'clip', sigma_flow=0.1, seed=1)
        outputs = []
        for name in ('a', 'b'):
            config = RunConfig(num_motions=3, manifest=manifest, output_dir=self.tmp / name,
                               dump_affinity=self.tmp / name / 'affinity.txt')
            segmentation_service.segment_manifest(config)
            outputs.append(self.tmp / name)
        first, second = outputs
        self.assertEqual((first / 'segmentation.yaml').read_text(), (second / 'segmentation.yaml').read_text())
        self.assertEqual((first / 'affinity.txt').read_bytes(), (second / 'affinity.txt').read_bytes())
        for mask in sorted((first / 'masks').glob('*.png')):
            self.assertEqual(mask.read_bytes(), (second / 'masks' / mask.name).read_bytes())

    def test_affinity_dump_without_similarity(self):
        manifest = emit_sequence(preset('rotor'), self.tmp / 'clip')
        dump = self.tmp / 'w.txt'
        config = RunConfig(num_motions=1, manifest=manifest, output_dir=self.tmp / 'out', dump_affinity=dump,
                           ablation=constants.ABLATION_PROPOSALS)
        with self.assertLogs('motionseg.segmentation.pipeline', level='WARNING'):
            segmentation_service.segment_manifest(config)
        self.assertFalse(dump.exists())

    def test_manifest_required(self):
        with self.assertRaises(ValidationError):
            segmentation_service.segment_manifest(RunConfig(num_motions=1))
