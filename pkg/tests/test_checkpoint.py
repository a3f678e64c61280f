import pytest
import torch
import torch.nn as nn

from src.heap import HeAPNetwork, HeAPPathwaySpec, HeAPStageSpec
from src.surgery import surgerize
from src.surgery.checkpoint import MAGIC, build_model, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from src.utils.exceptions import CheckpointException


def heap_network() -> HeAPNetwork:
    spec = HeAPStageSpec(num_classes=3, image_size=8,
                         pathways=[HeAPPathwaySpec(scale=1.0, width=6), HeAPPathwaySpec(scale=2.0, width=4)])
    return HeAPNetwork(spec)


class TestCheckpointRoundTrip:
    """APNETv1 files rebuild the same network with the same outputs."""

    def test_pathway_network(self, tiny_plan, tmp_path):
        torch.manual_seed(0)
        net = surgerize(tiny_plan)
        net.train()
        net(torch.rand(4, 3, 16, 16))  # move the running statistics off their defaults
        rng_state = torch.get_rng_state()
        path = save_checkpoint(tmp_path / "net.apnet", net, {"epoch": 3}, {"rng/torch": rng_state})

        checkpoint = load_checkpoint(path)
        assert checkpoint.metadata == {"epoch": 3}
        assert checkpoint.header["kind"] == "pathways"
        assert len(checkpoint.header["layers"]) == len(net.ap_layers())
        assert torch.equal(checkpoint.extras("rng/")["torch"], rng_state)

        rebuilt = build_model(checkpoint)
        x = torch.rand(2, 3, 16, 16)
        torch.testing.assert_close(rebuilt.infer(x), net.infer(x), rtol=0, atol=0)

    def test_layer_specs_are_recorded(self, tiny_plan):
        net = surgerize(tiny_plan)
        checkpoint = decode_checkpoint(encode_checkpoint(net))
        recorded = {entry["name"]: entry["spec"] for entry in checkpoint.header["layers"]}
        for name, layer in net.ap_layers():
            assert recorded[name] == layer.spec.to_dict()

    def test_heap_network(self, tmp_path):
        torch.manual_seed(1)
        net = heap_network()
        path = save_checkpoint(tmp_path / "heap.apnet", net)
        rebuilt = build_model(load_checkpoint(path))
        assert isinstance(rebuilt, HeAPNetwork)
        x = torch.rand(2, 3, 8, 8)
        torch.testing.assert_close(rebuilt.infer(x), net.infer(x), rtol=0, atol=0)

    def test_extra_tensors_keep_dtype_and_shape(self):
        net = heap_network()
        extras = {"optim/a": torch.randn(2, 3, dtype=torch.float64), "rng/data": torch.arange(5, dtype=torch.uint8)}
        checkpoint = decode_checkpoint(encode_checkpoint(net, extra_tensors=extras))
        for name, tensor in extras.items():
            assert torch.equal(checkpoint.tensors[name], tensor)
            assert checkpoint.tensors[name].dtype == tensor.dtype

    def test_no_temporary_files_remain(self, tiny_plan, tmp_path):
        save_checkpoint(tmp_path / "net.apnet", surgerize(tiny_plan))
        save_checkpoint(tmp_path / "net.apnet", surgerize(tiny_plan))
        assert [p.name for p in tmp_path.iterdir()] == ["net.apnet"]


class TestCorruptCheckpoints:
    """Malformed files fail with CheckpointException."""

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.apnet"
        path.write_bytes(b"NOTAPNET\n" + bytes(32))
        with pytest.raises(CheckpointException):
            load_checkpoint(path)

    def test_truncated_body(self, tiny_plan):
        raw = encode_checkpoint(surgerize(tiny_plan))
        with pytest.raises(CheckpointException):
            decode_checkpoint(raw[:-16])

    def test_truncated_header(self, tiny_plan):
        raw = encode_checkpoint(surgerize(tiny_plan))
        with pytest.raises(CheckpointException):
            decode_checkpoint(raw[:len(MAGIC) + 20])

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointException):
            load_checkpoint(tmp_path / "missing.apnet")

    def test_unsupported_model(self, tmp_path):
        with pytest.raises(CheckpointException):
            save_checkpoint(tmp_path / "linear.apnet", nn.Linear(2, 2))

    def test_weights_of_another_model(self, tiny_plan, tiny_plan_k3):
        checkpoint = decode_checkpoint(encode_checkpoint(surgerize(tiny_plan)))
        checkpoint.header["plan"] = tiny_plan_k3.model_dump(mode="json")
        with pytest.raises(CheckpointException):
            build_model(checkpoint)
