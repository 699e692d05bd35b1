"""Extractor tests: mock adapters, format compatibility, CLI behavior.

The dump files produced here are validated through the consumer pipeline's
own reader and CLI — that round trip is the whole point of the package.
"""

import subprocess
import sys

import numpy as np
import pytest

from xmas.attn_store import (
    AttentionDump,
    ExampleRecord,
    FormatError,
    read_attention_dump,
    write_attention_dump,
)
from xmas_extract.adapters import (
    CheckpointLoadError,
    SpanError,
    UnknownModelError,
    resolve_model,
)
from xmas_extract.dump_writer import write_xmad
from xmas_extract.extract import extract
from xmas_extract.spec import ExtractionSpec


def run_extract_cli(*argv):
    proc = subprocess.run(
        [sys.executable, "-m", "xmas_extract.cli", *map(str, argv)],
        capture_output=True,
    )
    return proc.returncode, proc.stdout, proc.stderr


def run_primary_score(dump_path, table_path):
    proc = subprocess.run(
        [sys.executable, "-m", "xmas.cli", "score",
         "--dump", str(dump_path), "--out", str(table_path)],
        capture_output=True,
    )
    return proc.returncode


# ------------------------------------------------------------- mock outputs


def test_uniform_mock_yields_layer_over_n(tmp_path):
    # 2 layers, N = 4 tokens: every summed entry is 2 * (1/4) = 0.5
    out = tmp_path / "uni.xmad"
    spec = ExtractionSpec(
        model_id="mock-uniform:n_img=2,n_txt=2,layers=2,heads=4,examples=3",
        checkpoints=["c0", "c1", "c2"],
        out_path=out,
    )
    assert extract(spec) == 3
    dump = read_attention_dump(out)
    assert dump.layer_count == 2
    assert dump.n_checkpoints == 3
    for rec in dump.records:
        for m in rec.matrices:
            assert m.shape == (2, 2)
            np.testing.assert_array_equal(m, np.full((2, 2), 0.5))


def test_onehot_mock_concentrates_on_first_image_column(tmp_path):
    out = tmp_path / "hot.xmad"
    spec = ExtractionSpec(
        model_id="mock-onehot:n_img=3,n_txt=2,examples=2",
        checkpoints=["only"],
        out_path=out,
    )
    extract(spec)
    dump = read_attention_dump(out)
    assert dump.layer_count == 1
    for rec in dump.records:
        (m,) = rec.matrices
        np.testing.assert_array_equal(m[:, 0], np.ones(2))
        np.testing.assert_array_equal(m[:, 1:], np.zeros((2, 2)))


def test_output_validates_under_primary_reader_and_cli(tmp_path):
    out = tmp_path / "ok.xmad"
    code, _, err = run_extract_cli(
        "--model", "mock-uniform:layers=2,heads=2",
        "--checkpoints", "a,b", "--out", out,
    )
    assert code == 0, err
    read_attention_dump(out).validate()
    assert run_primary_score(out, tmp_path / "ok.xmat") == 0


def test_head_modes_agree_on_mocks(tmp_path):
    outs = []
    for mode in ("mean", "concat"):
        out = tmp_path / f"{mode}.xmad"
        extract(
            ExtractionSpec(
                model_id="mock-uniform:layers=2,heads=4",
                checkpoints=["c0"],
                out_path=out,
                heads=mode,
            )
        )
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_layer_subset_scales_entries(tmp_path):
    for layers, expected in (( [0, 2], 0.5 ), ( [1], 0.25 )):
        out = tmp_path / "sub.xmad"
        extract(
            ExtractionSpec(
                model_id="mock-uniform:layers=3",
                checkpoints=["c0"],
                out_path=out,
                layers=layers,
            )
        )
        dump = read_attention_dump(out)
        assert dump.layer_count == len(layers)
        np.testing.assert_allclose(dump.records[0].matrices[0], expected)


# ------------------------------------------------------ skips and failures


def test_span_failure_skips_and_renumbers(tmp_path):
    out = tmp_path / "skip.xmad"
    spec = ExtractionSpec(
        model_id="mock-uniform:examples=4,bad_spans=1+3",
        checkpoints=["c0"],
        out_path=out,
    )
    assert extract(spec) == 2
    assert spec.skipped == [1, 3]
    dump = read_attention_dump(out)
    assert [r.example_id for r in dump.records] == [0, 1]


def test_all_spans_failing_is_cli_failure(tmp_path):
    code, _, err = run_extract_cli(
        "--model", "mock-uniform:examples=2,bad_spans=0+1",
        "--checkpoints", "c0", "--out", tmp_path / "none.xmad",
    )
    assert code == 1
    assert b"no examples survived" in err


def test_checkpoint_load_failure_is_fatal(tmp_path):
    spec = ExtractionSpec(
        model_id="mock-uniform",
        checkpoints=["c0", "missing"],
        out_path=tmp_path / "x.xmad",
    )
    with pytest.raises(CheckpointLoadError):
        extract(spec)
    code, _, _ = run_extract_cli(
        "--model", "mock-uniform", "--checkpoints", "c0,missing",
        "--out", tmp_path / "x.xmad",
    )
    assert code == 1


def test_adapter_row_stochastic_guard(tmp_path):
    class Broken:
        layer_count = 1
        n_examples = 1

        def load_checkpoint(self, tag):
            pass

        def token_spans(self, i):
            return 1, 1

        def attention_maps(self, i, mode):
            return np.full((1, 2, 2), 0.7)  # rows sum to 1.4

    import xmas_extract.adapters as adapters

    adapters._REGISTRY["broken"] = lambda: Broken()
    try:
        spec = ExtractionSpec(
            model_id="broken", checkpoints=["c0"], out_path=tmp_path / "b.xmad"
        )
        with pytest.raises(ValueError, match="row-stochastic"):
            extract(spec)
    finally:
        del adapters._REGISTRY["broken"]


# ------------------------------------------------------------ spec parsing


def test_spec_validation():
    with pytest.raises(ValueError):
        ExtractionSpec("mock-uniform", [], "o.xmad")
    with pytest.raises(ValueError):
        ExtractionSpec("mock-uniform", ["c0"], "o.xmad", heads="max")
    with pytest.raises(ValueError):
        ExtractionSpec("mock-uniform", ["c0"], "o.xmad", layers=[])
    with pytest.raises(ValueError):
        ExtractionSpec("mock-uniform", ["c0"], "o.xmad", layers=[0, 0])


def test_resolve_model_parsing():
    adapter = resolve_model("mock-onehot:n_img=5,examples=7")
    assert adapter.n_img == 5 and adapter.n_examples == 7
    with pytest.raises(UnknownModelError):
        resolve_model("some-chat-7b")
    with pytest.raises(ValueError):
        resolve_model("mock-uniform:heads")
    with pytest.raises(SpanError):
        resolve_model("mock-uniform:bad_spans=0").token_spans(0)


def test_layer_indices_out_of_range(tmp_path):
    spec = ExtractionSpec(
        model_id="mock-uniform:layers=2",
        checkpoints=["c0"],
        out_path=tmp_path / "x.xmad",
        layers=[0, 5],
    )
    with pytest.raises(ValueError, match="out of range"):
        extract(spec)
    code, _, _ = run_extract_cli(
        "--model", "mock-uniform:layers=2", "--checkpoints", "c0",
        "--out", tmp_path / "x.xmad", "--layers", "0,5",
    )
    assert code == 2


def test_unknown_model_is_cli_args_error(tmp_path):
    code, _, _ = run_extract_cli(
        "--model", "gpt-oss", "--checkpoints", "c0", "--out", tmp_path / "x.xmad"
    )
    assert code == 2


# ------------------------------------------------------------------ writer


def test_writer_matches_primary_writer_byte_for_byte(tmp_path):
    rng = np.random.default_rng(3)
    mats = [
        [rng.uniform(0, 2, size=(3, 2)) for _ in range(2)] for _ in range(4)
    ]
    ours = tmp_path / "ours.xmad"
    theirs = tmp_path / "theirs.xmad"
    write_xmad(ours, 2, mats)
    write_attention_dump(
        AttentionDump(2, 2, [ExampleRecord(i, m) for i, m in enumerate(mats)]),
        theirs,
    )
    assert ours.read_bytes() == theirs.read_bytes()


def test_writer_rejects_bad_values(tmp_path):
    out = tmp_path / "bad.xmad"
    with pytest.raises(ValueError, match=r"outside \[0, 1\]"):
        write_xmad(out, 1, [[np.full((2, 2), 1.5)]])
    with pytest.raises(ValueError, match="non-finite"):
        write_xmad(out, 1, [[np.full((2, 2), np.nan)]])
    with pytest.raises(ValueError, match="checkpoints"):
        write_xmad(out, 1, [[np.ones((2, 2))], [np.ones((2, 2))] * 2])
    with pytest.raises(ValueError, match="2-D"):
        write_xmad(out, 1, [[np.ones(4)]])


def test_empty_dump_keeps_declared_checkpoints(tmp_path):
    out = tmp_path / "empty.xmad"
    write_xmad(out, 1, [], n_checkpoints=3)
    dump = read_attention_dump(out)
    assert dump.n_examples == 0 and dump.n_checkpoints == 3


def test_truncated_output_rejected_by_primary_reader(tmp_path):
    out = tmp_path / "trunc.xmad"
    write_xmad(out, 1, [[np.full((2, 2), 0.25)]])
    out.write_bytes(out.read_bytes()[:-3])
    with pytest.raises(FormatError):
        read_attention_dump(out)


# ------------------------------------------------------------- determinism


def test_extraction_byte_deterministic(tmp_path):
    blobs = []
    for name in ("a.xmad", "b.xmad"):
        out = tmp_path / name
        code, _, _ = run_extract_cli(
            "--model", "mock-uniform:layers=2,heads=3,examples=5",
            "--checkpoints", "c0,c1", "--out", out, "--heads", "concat",
        )
        assert code == 0
        blobs.append(out.read_bytes())
    assert blobs[0] == blobs[1]
