import numpy as np
import pytest

from _toy import write_toy_csv
from opinionminer.cli import build_settings, main, parse_config_file
from opinionminer.evaluation import parse_report
from opinionminer.layers import init_model_params
from opinionminer.text_pipeline import Vocabulary
from opinionminer.training import ConfigError, TrainConfig, save_checkpoint

TINY_CONFIG = """\
# toy run settings
embedding_dim = 8
gru_units = 4
lstm_units = 3
dropout_rate = 0.1
batch_size = 8
learning_rate = 0.02
max_epochs = 8
patience = 8
max_len = 12
vocab_size = 60
test_fraction = 0.3
validation_fraction = 0.2
seed = 7
"""


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    """One real `train` invocation shared by the read-only CLI tests."""
    root = tmp_path_factory.mktemp("cli_train")
    data = write_toy_csv(root / "reviews.csv", 80, seed=5, keywords=1)
    config = root / "toy.cfg"
    config.write_text(TINY_CONFIG, encoding="utf-8")
    out = root / "run1"
    code = main(["train", "--config", str(config), "--data", str(data),
                 "--out", str(out)])
    assert code == 0
    return {"root": root, "data": data, "config": config, "out": out}


def zero_checkpoint(tmp_path, vocab_tokens=("good", "bad", "film")):
    vocab = Vocabulary.from_content_tokens(vocab_tokens)
    config = TrainConfig(embedding_dim=4, gru_units=2, lstm_units=2,
                         vocab_size=vocab.size, max_len=8, seed=0)
    params = init_model_params(vocab.size, 4, 2, 2, seed=0)
    for _, arr in params.named_arrays():
        arr[...] = 0.0
    path = tmp_path / "zero.ckpt"
    save_checkpoint(params, config, vocab, path,
                    stopwords=frozenset({"the"}), whitelist=frozenset({"not"}))
    return path


class TestConfigHandling:
    def test_parse_file_comments_and_blanks(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("# comment\n\nseed = 3\nbatch_size = 16\n", encoding="utf-8")
        assert parse_config_file(path) == {"seed": "3", "batch_size": "16"}

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config key: widgets"):
            build_settings({"widgets": "7"})

    def test_bad_value_names_key(self):
        with pytest.raises(ConfigError, match="batch_size"):
            build_settings({"batch_size": "many"})

    def test_flags_override_file(self):
        config, extras = build_settings({"seed": "1", "out": "a"},
                                        overrides={"seed": 9, "out": "b"})
        assert config.seed == 9
        assert extras["out"] == "b"

    def test_invalid_dropout_exits_2(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("dropout_rate = 1.5\n", encoding="utf-8")
        data = write_toy_csv(tmp_path / "d.csv", 20, seed=0)
        code = main(["train", "--config", str(cfg), "--data", str(data),
                     "--out", str(tmp_path / "out")])
        assert code == 2
        assert "dropout_rate" in capsys.readouterr().err


class TestTrainCommand:
    def test_artifacts_exist(self, trained_run):
        out = trained_run["out"]
        assert (out / "model.ckpt").exists()
        assert (out / "history.txt").exists()
        assert (out / "report.txt").exists()
        values = parse_report((out / "report.txt").read_text(encoding="utf-8"))
        assert values["n"] > 0

    def test_rerun_is_byte_identical(self, trained_run):
        out2 = trained_run["root"] / "run2"
        code = main(["train", "--config", str(trained_run["config"]),
                     "--data", str(trained_run["data"]), "--out", str(out2)])
        assert code == 0
        for name in ("model.ckpt", "history.txt", "report.txt"):
            a = (trained_run["out"] / name).read_bytes()
            b = (out2 / name).read_bytes()
            assert a == b, name

    def test_missing_data_exits_3(self, tmp_path, capsys):
        code = main(["train", "--data", str(tmp_path / "nope.csv"),
                     "--out", str(tmp_path / "out")])
        assert code == 3

    def test_no_data_key_exits_2(self, tmp_path):
        assert main(["train", "--out", str(tmp_path / "out")]) == 2


class TestEvaluateCommand:
    def test_evaluate_training_file(self, trained_run, tmp_path, capsys):
        out = tmp_path / "eval"
        code = main(["evaluate", "--checkpoint", str(trained_run["out"] / "model.ckpt"),
                     "--data", str(trained_run["data"]), "--out", str(out)])
        assert code == 0
        values = parse_report((out / "report.txt").read_text(encoding="utf-8"))
        assert values["n"] == 80
        # the converged toy model labels its own training file perfectly
        assert values["accuracy"] == 1.0

    def test_unknown_tokens_only(self, tmp_path, capsys):
        ckpt = zero_checkpoint(tmp_path)
        data = tmp_path / "weird.csv"
        data.write_text("text,label\nzzz qqq xxx,1\nwww vvv,0\n", encoding="utf-8")
        code = main(["evaluate", "--checkpoint", str(ckpt), "--data", str(data),
                     "--out", str(tmp_path / "eval")])
        assert code == 0
        values = parse_report((tmp_path / "eval" / "report.txt").read_text("utf-8"))
        assert values["n"] == 2

    def test_corrupt_checkpoint_exits_3(self, tmp_path, capsys):
        ckpt = zero_checkpoint(tmp_path)
        data = bytearray(ckpt.read_bytes())
        data[len(data) // 2] ^= 0xFF
        ckpt.write_bytes(bytes(data))
        csv = write_toy_csv(tmp_path / "d.csv", 10, seed=0)
        code = main(["evaluate", "--checkpoint", str(ckpt), "--data", str(csv),
                     "--out", str(tmp_path / "eval")])
        assert code == 3
        assert "checksum" in capsys.readouterr().err


class TestPredictCommand:
    def test_zero_model_prints_boundary(self, tmp_path, capsys):
        ckpt = zero_checkpoint(tmp_path)
        code = main(["predict", "--checkpoint", str(ckpt), "--text", "whatever"])
        assert code == 0
        assert capsys.readouterr().out == "0.500000\t1\n"

    def test_file_line_count_preserved(self, tmp_path, capsys):
        ckpt = zero_checkpoint(tmp_path)
        inp = tmp_path / "reviews.txt"
        inp.write_text("good film\nbad film\nnothing\n", encoding="utf-8")
        code = main(["predict", "--checkpoint", str(ckpt), "--input", str(inp)])
        assert code == 0
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 3
        for line in lines:
            prob, label = line.split("\t")
            assert 0.0 <= float(prob) <= 1.0
            assert label in ("0", "1")

    def test_trained_model_labels_keyword(self, trained_run, capsys):
        ckpt = trained_run["out"] / "model.ckpt"
        code = main(["predict", "--checkpoint", str(ckpt),
                     "--text", "good good good", "--text", "bad bad bad"])
        assert code == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0].endswith("\t1")
        assert lines[1].endswith("\t0")

    def test_deterministic_output(self, trained_run, capsys):
        ckpt = trained_run["out"] / "model.ckpt"
        main(["predict", "--checkpoint", str(ckpt), "--text", "great film"])
        first = capsys.readouterr().out
        main(["predict", "--checkpoint", str(ckpt), "--text", "great film"])
        assert capsys.readouterr().out == first

    def test_empty_input_exits_2(self, tmp_path):
        ckpt = zero_checkpoint(tmp_path)
        assert main(["predict", "--checkpoint", str(ckpt)]) == 2


MODEL_COUNTS = {
    "lstm": (5568, 4962, 677, 232),
    "cnn_lstm": (5710, 4722, 769, 238),
    "gru_lstm": (5336, 5244, 395, 464),
    "hbgru_lstm": (5573, 5352, 282, 232),
}


def write_report(path, tp, tn, fp, fn, loss=0.15):
    n = tp + tn + fp + fn
    acc = (tp + tn) / n
    lines = [f"n = {n}", f"tp = {tp}", f"tn = {tn}", f"fp = {fp}", f"fn = {fn}",
             f"accuracy = {acc!r}",
             f"precision_pos = {tp / max(tp + fp, 1)!r}",
             f"recall_pos = {tp / max(tp + fn, 1)!r}",
             "f1_pos = 0.9", "precision_neg = 0.9", "recall_neg = 0.9",
             "f1_neg = 0.9", f"percent_loss = {100 * loss!r}"]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


class TestPretrainedEmbeddings:
    def write_vectors(self, path, tokens, dim):
        rng = np.random.default_rng(1)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{len(tokens)} {dim}\n")
            vectors = {}
            for token in tokens:
                vec = rng.normal(size=dim).round(4)
                vectors[token] = vec
                fh.write(token + " " + " ".join(str(v) for v in vec) + "\n")
        return vectors

    def test_vectors_applied_to_vocab_rows(self, tmp_path):
        from opinionminer.cli import _apply_pretrained
        vocab = Vocabulary.from_content_tokens(["good", "bad", "film"])
        params = init_model_params(vocab.size, 4, 2, 2, seed=0)
        vectors = self.write_vectors(tmp_path / "w2v.txt", ["good", "absent"], 4)
        before_bad = params.embedding.E[vocab.index_of("bad")].copy()
        _apply_pretrained(params, vocab, tmp_path / "w2v.txt")
        np.testing.assert_allclose(params.embedding.E[vocab.index_of("good")],
                                   vectors["good"])
        # tokens missing from the file keep their seeded initialization
        np.testing.assert_array_equal(params.embedding.E[vocab.index_of("bad")],
                                      before_bad)
        np.testing.assert_array_equal(params.embedding.E[0], np.zeros(4))

    def test_dimension_mismatch_exits_2(self, tmp_path, capsys):
        self.write_vectors(tmp_path / "w2v.txt", ["good"], 5)
        data = write_toy_csv(tmp_path / "d.csv", 40, seed=2)
        cfg = tmp_path / "c.cfg"
        cfg.write_text(
            "embedding_dim = 8\ngru_units = 4\nlstm_units = 3\nmax_epochs = 1\n"
            f"embeddings = {tmp_path / 'w2v.txt'}\n", encoding="utf-8")
        code = main(["train", "--config", str(cfg), "--data", str(data),
                     "--out", str(tmp_path / "out")])
        assert code == 2
        assert "embedding" in capsys.readouterr().err

    def test_train_with_pretrained_runs(self, tmp_path):
        self.write_vectors(tmp_path / "w2v.txt", ["good", "bad"], 8)
        data = write_toy_csv(tmp_path / "d.csv", 40, seed=2)
        cfg = tmp_path / "c.cfg"
        cfg.write_text(
            "embedding_dim = 8\ngru_units = 4\nlstm_units = 3\nmax_epochs = 1\n"
            "batch_size = 8\nmax_len = 12\nvocab_size = 60\n"
            f"embeddings = {tmp_path / 'w2v.txt'}\n", encoding="utf-8")
        code = main(["train", "--config", str(cfg), "--data", str(data),
                     "--out", str(tmp_path / "out")])
        assert code == 0


class TestWordlistFiles:
    def test_custom_stopword_and_whitelist_files(self, tmp_path):
        (tmp_path / "stop.txt").write_text("plot\nfilm\n", encoding="utf-8")
        (tmp_path / "keep.txt").write_text("plot\n", encoding="utf-8")
        data = write_toy_csv(tmp_path / "d.csv", 40, seed=3)
        cfg = tmp_path / "c.cfg"
        cfg.write_text(
            "embedding_dim = 8\ngru_units = 4\nlstm_units = 3\nmax_epochs = 1\n"
            "batch_size = 8\nmax_len = 12\nvocab_size = 60\n"
            f"stopwords = {tmp_path / 'stop.txt'}\n"
            f"whitelist = {tmp_path / 'keep.txt'}\n", encoding="utf-8")
        out = tmp_path / "out"
        assert main(["train", "--config", str(cfg), "--data", str(data),
                     "--out", str(out)]) == 0
        from opinionminer.training import load_checkpoint
        ckpt = load_checkpoint(out / "model.ckpt")
        assert ckpt.stopwords == {"plot", "film"}
        assert ckpt.whitelist == {"plot"}
        # "film" was stopworded away, "plot" survived via the whitelist
        assert "film" not in ckpt.vocab.token_to_index
        assert "plot" in ckpt.vocab.token_to_index


class TestJsonlDataFormat:
    def test_train_on_jsonl(self, tmp_path):
        import json as jsonlib
        from _toy import toy_reviews
        data = tmp_path / "reviews.jsonl"
        with open(data, "w", encoding="utf-8") as fh:
            for text, label in toy_reviews(40, seed=4):
                fh.write(jsonlib.dumps({"text": text, "label": label}) + "\n")
        cfg = tmp_path / "c.cfg"
        cfg.write_text(
            "embedding_dim = 8\ngru_units = 4\nlstm_units = 3\nmax_epochs = 1\n"
            "batch_size = 8\nmax_len = 12\nvocab_size = 60\n"
            "data_format = jsonl\n", encoding="utf-8")
        assert main(["train", "--config", str(cfg), "--data", str(data),
                     "--out", str(tmp_path / "out")]) == 0


class TestModelMismatch:
    def test_inconsistent_checkpoint_exits_4(self, tmp_path, capsys):
        # vocabulary smaller than the embedding table
        vocab = Vocabulary.from_content_tokens(["good"])
        config = TrainConfig(embedding_dim=4, gru_units=2, lstm_units=2,
                             vocab_size=8, max_len=8)
        params = init_model_params(8, 4, 2, 2, seed=0)
        path = tmp_path / "bad.ckpt"
        save_checkpoint(params, config, vocab, path)
        data = write_toy_csv(tmp_path / "d.csv", 10, seed=0)
        code = main(["evaluate", "--checkpoint", str(path), "--data", str(data),
                     "--out", str(tmp_path / "eval")])
        assert code == 4
        assert "vocabulary" in capsys.readouterr().err


class TestCompareCommand:
    def test_reference_table_statistic(self, tmp_path, capsys):
        paths = [write_report(tmp_path / f"{name}.txt", *counts)
                 for name, counts in MODEL_COUNTS.items()]
        code = main(["compare"] + [str(p) for p in paths])
        assert code == 0
        out = capsys.readouterr().out
        assert "chi_square_statistic = 495.60" in out
        assert "degrees_of_freedom = 9" in out

    def test_identical_reports_statistic_zero(self, tmp_path, capsys):
        a = write_report(tmp_path / "a.txt", 40, 40, 10, 10)
        b = write_report(tmp_path / "b.txt", 40, 40, 10, 10)
        code = main(["compare", str(a), str(b)])
        assert code == 0
        assert "chi_square_statistic = 0.00" in capsys.readouterr().out

    def test_differing_n_exits_2(self, tmp_path, capsys):
        a = write_report(tmp_path / "a.txt", 40, 40, 10, 10)
        b = write_report(tmp_path / "b.txt", 40, 40, 10, 9)
        code = main(["compare", str(a), str(b)])
        assert code == 2
        err = capsys.readouterr().err
        assert "a.txt" in err and "b.txt" in err

    def test_single_report_exits_2(self, tmp_path):
        a = write_report(tmp_path / "a.txt", 40, 40, 10, 10)
        assert main(["compare", str(a)]) == 2

    def test_degenerate_table_exits_3(self, tmp_path, capsys):
        # two perfect classifiers leave the FP and FN columns all zero, so
        # the chi-square table has zero marginals
        a = write_report(tmp_path / "a.txt", 50, 50, 0, 0)
        b = write_report(tmp_path / "b.txt", 50, 50, 0, 0)
        code = main(["compare", str(a), str(b)])
        assert code == 3
        assert "chi-square" in capsys.readouterr().err
