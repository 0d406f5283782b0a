import numpy as np
import yaml
from PIL import Image

from django.test import SimpleTestCase

from motionseg.segmentation import constants
from motionseg.segmentation.cues import (
    DepthMap,
    load_sequence,
    read_depth,
    read_flow,
    read_masks,
    to_inverse_depth,
    write_depth,
    write_depth_png,
    write_flow,
    write_masks,
    write_sequence,
)
from motionseg.segmentation.exceptions import (
    DimensionMismatch,
    MalformedFile,
    MissingFile,
    NonFiniteValue,
    UnknownTrackId,
    ValidationError,
)

from .factories import SequenceFactory, TempDirMixin


class FlowFileTests(TempDirMixin, SimpleTestCase):

    def test_round_trip_is_bit_exact_on_fuzzed_grids(self):
        rng = np.random.default_rng(11)
        path = self.tmp / 'f.flo'
        for _ in range(500):
            height, width = rng.integers(1, 9, size=2)
            data = (rng.standard_normal((height, width, 2)) * 10.0 ** rng.integers(-3, 4)).astype(np.float32)
            flow = SequenceFactory.flow(data[..., 0], data[..., 1])
            write_flow(path, flow)
            loaded = read_flow(path)
            self.assertEqual((loaded.width, loaded.height), (width, height))
            self.assertTrue(np.array_equal(loaded.data, flow.data))

    def test_file_layout(self):
        flow = SequenceFactory.flow(np.ones((2, 3)), np.zeros((2, 3)))
        raw = write_flow(self.tmp / 'f.flo', flow).read_bytes()
        self.assertEqual(len(raw), 12 + 8 * 6)
        self.assertEqual(np.frombuffer(raw[:4], '<f4')[0], np.float32(202021.25))
        self.assertEqual(list(np.frombuffer(raw[4:12], '<i4')), [3, 2])

    def test_bad_magic(self):
        path = self.tmp / 'bad.flo'
        path.write_bytes(np.array([1.0], '<f4').tobytes() + np.array([1, 1], '<i4').tobytes() + b'\0' * 8)
        with self.assertRaises(MalformedFile):
            read_flow(path)

    def test_truncated_body(self):
        path = write_flow(self.tmp / 'f.flo', SequenceFactory.flow(np.ones((4, 4)), np.ones((4, 4))))
        path.write_bytes(path.read_bytes()[:-4])
        with self.assertRaisesMessage(MalformedFile, 'expected'):
            read_flow(path)

    def test_nan_rejected(self):
        path = self.tmp / 'nan.flo'
        header = np.array([constants.FLO_MAGIC], '<f4').tobytes() + np.array([1, 1], '<i4').tobytes()
        path.write_bytes(header + np.array([np.nan, 0.0], '<f4').tobytes())
        with self.assertRaises(NonFiniteValue):
            read_flow(path)

    def test_missing_file_names_the_path(self):
        with self.assertRaisesMessage(MissingFile, 'nowhere.flo'):
            read_flow(self.tmp / 'nowhere.flo')


class DepthFileTests(TempDirMixin, SimpleTestCase):

    def test_pfm_round_trip_is_bit_exact_on_fuzzed_grids(self):
        rng = np.random.default_rng(12)
        path = self.tmp / 'd.pfm'
        for _ in range(500):
            height, width = rng.integers(1, 9, size=2)
            values = rng.uniform(0.01, 100.0, size=(height, width)).astype(np.float32)
            write_depth(path, SequenceFactory.depth(values))
            loaded = read_depth(path)
            self.assertTrue(np.array_equal(loaded.data, values))
            self.assertEqual(loaded.clamped, 0)

    def test_big_endian_rows_bottom_up(self):
        path = self.tmp / 'be.pfm'
        # stored bottom row first
        path.write_bytes(b'Pf\n2 2\n1.0\n' + np.array([3, 4, 1, 2], '>f4').tobytes())
        loaded = read_depth(path)
        self.assertEqual(loaded.data.tolist(), [[1, 2], [3, 4]])

    def test_color_pfm_rejected(self):
        path = self.tmp / 'color.pfm'
        path.write_bytes(b'PF\n1 1\n-1.0\n' + np.zeros(3, '<f4').tobytes())
        with self.assertRaisesMessage(MalformedFile, 'color PFM'):
            read_depth(path)

    def test_zero_scale_rejected(self):
        path = self.tmp / 'zero.pfm'
        path.write_bytes(b'Pf\n1 1\n0.0\n' + np.ones(1, '<f4').tobytes())
        with self.assertRaises(MalformedFile):
            read_depth(path)

    def test_nonpositive_depth_is_clamped_and_counted(self):
        path = self.tmp / 'neg.pfm'
        path.write_bytes(b'Pf\n3 1\n-1.0\n' + np.array([0.0, -2.0, 5.0], '<f4').tobytes())
        with self.assertLogs('motionseg.segmentation.cues', level='WARNING'):
            loaded = read_depth(path)
        self.assertEqual(loaded.clamped, 2)
        self.assertTrue(np.all(loaded.data > 0))
        self.assertEqual(loaded.data[0, 2], 5.0)

    def test_png_depth_uses_declared_scale(self):
        values = np.array([[1.0, 5.0], [7.5, 10.0]], dtype=np.float32)
        path = write_depth_png(self.tmp / 'd.png', SequenceFactory.depth(values), png_scale=10.0)
        loaded = read_depth(path, png_scale=10.0)
        np.testing.assert_allclose(loaded.data, values, atol=10.0 / 65535)

    def test_inverse_depth_conventions(self):
        depth = SequenceFactory.depth(np.full((2, 2), 4.0))
        np.testing.assert_allclose(to_inverse_depth(depth).q, 0.25)
        inverse = SequenceFactory.depth(np.full((2, 2), 4.0), convention='inverse_depth')
        np.testing.assert_allclose(to_inverse_depth(inverse).q, 4.0)

    def test_depth_map_rejects_bad_values(self):
        with self.assertRaises(ValidationError):
            DepthMap(width=1, height=1, data=np.zeros((1, 1)))
        with self.assertRaises(ValidationError):
            DepthMap(width=1, height=1, data=np.ones((1, 1)), convention='disparity')


class MaskFileTests(TempDirMixin, SimpleTestCase):

    def test_round_trip(self):
        labels = np.array([[0, 1, 1], [300, 300, 0]])
        loaded = read_masks(write_masks(self.tmp / 'm.png', SequenceFactory.mask(labels)))
        self.assertTrue(np.array_equal(loaded.labels, labels))
        self.assertEqual(loaded.track_ids, [1, 300])

    def test_eight_bit_png_rejected(self):
        path = self.tmp / 'rgb.png'
        Image.fromarray(np.zeros((2, 2, 3), dtype=np.uint8)).save(path)
        with self.assertRaises(MalformedFile):
            read_masks(path)


class ManifestTests(TempDirMixin, SimpleTestCase):

    def make_sequence(self):
        first = SequenceFactory.blocks(8, 8, [(0, 0, 4, 4, 1), (4, 4, 8, 8, 2)])
        second = SequenceFactory.blocks(8, 8, [(0, 1, 4, 5, 1), (4, 3, 8, 7, 2)])
        flows = [SequenceFactory.flow(np.full((8, 8), 0.5), np.full((8, 8), -0.25))]
        depths = [SequenceFactory.depth(np.full((8, 8), 2.0)), SequenceFactory.depth(np.full((8, 8), 3.0))]
        return SequenceFactory.sequence([first, second], flows=flows, depths=depths)

    def test_write_then_load(self):
        seq = self.make_sequence()
        loaded = load_sequence(write_sequence(seq, self.tmp / 'clip'))
        self.assertEqual(loaded.track_ids, (1, 2))
        self.assertEqual(loaded.frame_count, 2)
        self.assertEqual(loaded.pair_count, 1)
        self.assertTrue(np.array_equal(loaded.masks[1].labels, seq.masks[1].labels))
        self.assertTrue(np.array_equal(loaded.flows[0].data, seq.flows[0].data))
        self.assertTrue(np.array_equal(loaded.depths[1].data, seq.depths[1].data))
        self.assertEqual(loaded.area(1), 32)

    def rewrite(self, manifest, **changes):
        document = yaml.safe_load(manifest.read_text())
        document.update(changes)
        manifest.write_text(yaml.safe_dump(document))

    def test_unsupported_version(self):
        manifest = write_sequence(self.make_sequence(), self.tmp / 'clip')
        self.rewrite(manifest, version=2)
        with self.assertRaisesMessage(MalformedFile, 'version'):
            load_sequence(manifest)

    def test_missing_flow_entry(self):
        manifest = write_sequence(self.make_sequence(), self.tmp / 'clip')
        document = yaml.safe_load(manifest.read_text())
        del document['frames'][0]['flow']
        manifest.write_text(yaml.safe_dump(document))
        with self.assertRaisesMessage(MalformedFile, "'flow'"):
            load_sequence(manifest)

    def test_unregistered_track(self):
        manifest = write_sequence(self.make_sequence(), self.tmp / 'clip')
        self.rewrite(manifest, track_ids=[1])
        with self.assertRaises(UnknownTrackId):
            load_sequence(manifest)

    def test_size_mismatch(self):
        manifest = write_sequence(self.make_sequence(), self.tmp / 'clip')
        write_flow(self.tmp / 'clip' / 'flow' / '0000.flo',
                   SequenceFactory.flow(np.zeros((4, 8)), np.zeros((4, 8))))
        with self.assertRaises(DimensionMismatch):
            load_sequence(manifest)

    def test_missing_cue_file(self):
        manifest = write_sequence(self.make_sequence(), self.tmp / 'clip')
        (self.tmp / 'clip' / 'depth' / '0001.pfm').unlink()
        with self.assertRaisesMessage(MissingFile, '0001.pfm'):
            load_sequence(manifest)

    def test_bad_depth_png_scale(self):
        manifest = write_sequence(self.make_sequence(), self.tmp / 'clip')
        for scale in ('abc', -1.0, [1, 2]):
            self.rewrite(manifest, depth_png_scale=scale)
            with self.assertRaisesMessage(MalformedFile, 'manifest.yaml'):
                load_sequence(manifest)

    def test_cue_path_that_is_a_directory(self):
        manifest = write_sequence(self.make_sequence(), self.tmp / 'clip')
        document = yaml.safe_load(manifest.read_text())
        document['frames'][0]['flow'] = 'depth'
        manifest.write_text(yaml.safe_dump(document))
        with self.assertRaisesMessage(MalformedFile, 'cannot read'):
            load_sequence(manifest)

    def test_manifest_path_that_is_a_directory(self):
        (self.tmp / 'manifest.yaml').mkdir()
        with self.assertRaises(MalformedFile):
            load_sequence(self.tmp / 'manifest.yaml')

    def test_flow_count_must_match_frames(self):
        seq = self.make_sequence()
        with self.assertRaises(DimensionMismatch):
            SequenceFactory.sequence([m.labels for m in seq.masks], flows=[])
