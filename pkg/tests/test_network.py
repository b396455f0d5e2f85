"""
Tests for the VSS block, the segmentation network, the projector and checkpoints.
"""

import logging
import pytest
import sys
from pathlib import Path

import numpy as np

# Add src to path for imports
sys.path.append(str(Path(__file__).parent.parent / "src"))

from src.network.checkpoint import MANIFEST_NAME, load_network, read_header, read_tensors, save_network, write_tensors
from src.network.segnet import (
    NetworkConfig,
    Projector,
    SegNetwork,
    build_pair,
    network_forward,
    projector_forward,
    space_to_depth,
    upsample_nearest,
)
from src.network.vss import VssBlock, vss_block_forward
from src.ssm.routes import RouteSet
from src.tensor.core import Tensor, reduce, sigmoid
from src.tensor.gradcheck import grad_check
from src.tensor.serialization import FormatError
from src.utils.helpers import load_config, resolve_config


@pytest.fixture
def small_config():
    return NetworkConfig(embed_dim=2, state_dim=2, init_std=0.3)


class TestVssBlock:
    """Gated SS2D block."""

    def test_shape_is_preserved(self):
        block = VssBlock(3, RouteSet.HV, state_dim=2, rng=np.random.default_rng(0))
        out, feats = vss_block_forward(block, Tensor(np.random.default_rng(1).normal(size=(2, 4, 4, 3))))
        assert out.shape == (2, 4, 4, 3)
        assert len(feats) == 4
        assert all(f.shape == (2, 4, 4, 6) for f in feats)

    def test_zero_out_projection_is_pure_residual(self):
        block = VssBlock(2, RouteSet.DA, state_dim=2, rng=np.random.default_rng(0))
        block.assign({"w_out": np.zeros((4, 2))})
        x = np.random.default_rng(2).normal(size=(4, 4, 2))
        out, _ = vss_block_forward(block, Tensor(x))
        np.testing.assert_array_equal(out.data, x)

    def test_channel_mismatch_raises(self):
        block = VssBlock(2, RouteSet.HV, state_dim=2)
        with pytest.raises(ValueError):
            vss_block_forward(block, Tensor(np.zeros((4, 4, 3))))

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(3)
        block = VssBlock(2, RouteSet.HV, state_dim=2, init_std=0.3, rng=rng)
        x = Tensor(rng.normal(size=(4, 4, 2)))
        checked = [x, block.w_in, block.conv, block.w_gate, block.w_out, block.route0.w_b, block.route3.a_log]

        def loss(*_):
            out, _ = vss_block_forward(block, x)
            return reduce("sum", sigmoid(out))

        assert grad_check(loss, checked) < 1e-4


class TestSegNetwork:
    """U-shaped network forward pass."""

    def test_default_config_shapes(self):
        config = resolve_config(load_config("config/config.yaml"))
        net = SegNetwork(NetworkConfig.from_config(config), RouteSet.HV, np.random.default_rng(0))
        logits, feats = network_forward(net, Tensor(np.random.default_rng(1).random((32, 32, 1))))
        assert logits.shape == (32, 32, 2)
        assert feats[0].shape == (8, 8, net.config.bottleneck_channels)

    def test_default_parameter_count_is_small(self):
        config = NetworkConfig.from_config(resolve_config({}))
        for route_set in (RouteSet.HV, RouteSet.DA):
            assert 0 < SegNetwork(config, route_set).num_parameters() < 100_000

    def test_batched_forward(self, small_config):
        net = SegNetwork(small_config, RouteSet.DA, np.random.default_rng(0))
        images = np.random.default_rng(1).random((3, 8, 8, 1))
        logits, feats = network_forward(net, Tensor(images))
        assert logits.shape == (3, 8, 8, 2)
        assert len(feats) == 4
        single, _ = network_forward(net, Tensor(images[1]))
        np.testing.assert_allclose(logits.data[1], single.data, atol=1e-12)

    def test_indivisible_extent_raises(self, small_config):
        net = SegNetwork(small_config, RouteSet.HV)
        with pytest.raises(ValueError):
            network_forward(net, Tensor(np.zeros((6, 6, 1))))

    def test_route_set_changes_the_output(self, small_config):
        image = Tensor(np.random.default_rng(2).random((8, 8, 1)))
        hv = SegNetwork(small_config, RouteSet.HV, np.random.default_rng(0))
        da = SegNetwork(small_config, RouteSet.DA, np.random.default_rng(0))
        assert not np.allclose(network_forward(hv, image)[0].data, network_forward(da, image)[0].data)

    def test_combined_route_set_scans_eight_routes(self, small_config):
        net = SegNetwork(small_config, RouteSet.ALL, np.random.default_rng(0))
        assert len(net.bottleneck.routes) == 8
        logits, feats = network_forward(net, Tensor(np.random.default_rng(3).random((8, 8, 1))))
        assert logits.shape == (8, 8, 2)
        assert len(feats) == 8
        hv = SegNetwork(small_config, RouteSet.HV)
        assert net.num_parameters() > hv.num_parameters()

    def test_resampling_helpers(self):
        x = Tensor(np.arange(16.0).reshape(4, 4, 1))
        folded = space_to_depth(x)
        assert folded.shape == (2, 2, 4)
        assert folded.data[0, 0].tolist() == [0.0, 1.0, 4.0, 5.0]
        up = upsample_nearest(Tensor(np.array([[[1.0], [2.0]]])))
        assert up.data[..., 0].tolist() == [[1.0, 1.0, 2.0, 2.0], [1.0, 1.0, 2.0, 2.0]]

    def test_sampled_parameter_gradients(self, small_config):
        rng = np.random.default_rng(4)
        net = SegNetwork(small_config, RouteSet.HV, rng)
        image = Tensor(rng.random((8, 8, 1)))
        named = net.parameters()
        checked = [named[k] for k in ("embed_w", "down_w", "fuse_w", "head_b",
                                     "encoder.conv", "bottleneck.route1.w_c", "decoder.w_gate")]
        indices = [rng.choice(t.size, size=min(2, t.size), replace=False) for t in checked]

        def loss(*_):
            logits, _ = network_forward(net, image)
            return reduce("sum", logits)

        assert grad_check(loss, checked, indices=indices) < 1e-4


class TestProjector:
    """Pool-and-perceptron head."""

    def test_zero_features_give_zero_vector(self):
        projector = Projector(6, 16, rng=np.random.default_rng(0))
        out = projector_forward(projector, Tensor(np.zeros((2, 2, 6))))
        assert out.shape == (16,)
        np.testing.assert_array_equal(out.data, 0.0)

    def test_batched_projection(self):
        projector = Projector(6, 16, rng=np.random.default_rng(0))
        h = np.random.default_rng(1).normal(size=(3, 2, 2, 6))
        out = projector_forward(projector, Tensor(h))
        assert out.shape == (3, 16)
        np.testing.assert_allclose(out.data[2], projector_forward(projector, Tensor(h[2])).data, atol=1e-12)

    def test_width_mismatch_raises(self):
        with pytest.raises(ValueError):
            projector_forward(Projector(6), Tensor(np.zeros((2, 2, 5))))

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(2)
        projector = Projector(4, 16, init_std=0.5, rng=rng)
        h = Tensor(rng.normal(size=(2, 2, 2, 4)))
        tensors = [h] + list(projector.parameters().values())

        def loss(*_):
            out = projector_forward(projector, h)
            return reduce("sum", out * out)

        assert grad_check(loss, tensors) < 1e-6


class TestBuildPair:
    """Initialization of the co-trained pair."""

    def test_route_sets(self, small_config):
        net_a, proj_a, net_b, proj_b = build_pair(small_config, seed=0)
        assert net_a.route_set is RouteSet.HV
        assert net_b.route_set is RouteSet.DA
        assert proj_a.in_dim == small_config.bottleneck_channels
        _, _, same_b, _ = build_pair(small_config, seed=0, diverse_scan=False)
        assert same_b.route_set is RouteSet.HV

    def test_networks_start_from_different_weights(self, small_config):
        net_a, _, net_b, _ = build_pair(small_config, seed=0)
        assert not np.array_equal(net_a.embed_w.data, net_b.embed_w.data)

    def test_same_seed_same_weights(self, small_config):
        first = build_pair(small_config, seed=3)
        second = build_pair(small_config, seed=3)
        for a, b in zip(first, second):
            for key, value in a.state_dict().items():
                assert value.tobytes() == b.state_dict()[key].tobytes()


class TestCheckpoint:
    """Directory checkpoints with a route-set tag."""

    def test_round_trip(self, tmp_path, small_config):
        net = SegNetwork(small_config, RouteSet.DA, np.random.default_rng(0))
        save_network(net, tmp_path / "net")
        assert read_header(tmp_path / "net")["route_set"] == "DA"

        restored = SegNetwork(small_config, RouteSet.DA, np.random.default_rng(9))
        load_network(restored, tmp_path / "net", expected_route_set=RouteSet.DA)
        for key, value in net.state_dict().items():
            assert restored.state_dict()[key].tobytes() == value.tobytes()

    def test_route_mismatch_warns_and_loads(self, tmp_path, small_config, caplog):
        net = SegNetwork(small_config, RouteSet.DA, np.random.default_rng(0))
        save_network(net, tmp_path / "net")
        other = SegNetwork(small_config, RouteSet.HV, np.random.default_rng(1))
        with caplog.at_level(logging.WARNING):
            load_network(other, tmp_path / "net", expected_route_set=RouteSet.HV)
        assert "differs from expected" in caplog.text
        np.testing.assert_array_equal(other.embed_w.data, net.embed_w.data)

    def test_missing_manifest_raises(self, tmp_path, small_config):
        with pytest.raises(FileNotFoundError):
            load_network(SegNetwork(small_config, RouteSet.HV), tmp_path)

    def test_corrupt_tensor_file_raises(self, tmp_path, small_config):
        net = SegNetwork(small_config, RouteSet.HV)
        save_network(net, tmp_path)
        (tmp_path / "embed_w.dct").write_bytes(b"JUNK" + bytes(12))
        with pytest.raises(FormatError):
            load_network(net, tmp_path)

    def test_parameter_set_mismatch_raises(self, tmp_path, small_config):
        save_network(Projector(4, 16), tmp_path)
        with pytest.raises(FormatError):
            load_network(SegNetwork(small_config, RouteSet.HV), tmp_path)

    def test_malformed_manifest_line_reports_offset(self, tmp_path, small_config):
        save_network(Projector(4, 16), tmp_path)
        manifest = tmp_path / MANIFEST_NAME
        manifest.write_text("route_set HV\nthis line is broken\n", encoding="utf-8")
        with pytest.raises(FormatError) as excinfo:
            load_network(Projector(4, 16), tmp_path)
        assert excinfo.value.offset == len("route_set HV\n")

    def test_rank_zero_tensor_round_trip(self, tmp_path):
        manifest = write_tensors(tmp_path, {"scale": np.array(1.5), "w": np.ones((2, 3))}, {"route_set": "HV"})
        assert "tensor scale -" in manifest.read_text(encoding="utf-8")
        header, tensors = read_tensors(tmp_path)
        assert header == {"route_set": "HV"}
        assert tensors["scale"].shape == ()
        assert tensors["scale"].item() == 1.5
        assert tensors["w"].shape == (2, 3)


if __name__ == "__main__":
    pytest.main([__file__])
