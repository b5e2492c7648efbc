import os
import json
import tempfile
from unittest import TestCase

import yaml
from parameterized import parameterized

from structattack.cli.cli import ALIAS_TO_COMMAND, COMMANDS, cli, dispatch
from structattack.data.dataset import ingest
from structattack.evaluator.metrics import make_records
from structattack.evaluator.report import write_records
from structattack.trainer.state import load_checkpoint, save_checkpoint
from structattack.trainer.train import train
from tests.unit.fixtures import make_image_folder, tiny_surrogate
from tests.unit.trainer.helpers import tiny_train_config

QUIET = ["--logging.dont_save_events"]
SMALL_MODEL = ["--models.random_init", "--surrogate", "squeezenet1_1", "--surrogate.layer", "3"]


class TestCli(TestCase):
    def test_cli_empty_call_as_list_then_systemexit(self):
        with self.assertRaises(SystemExit) as ctx:
            cli(args=[])
        self.assertEqual(ctx.exception.code, 2)

    def test_cli_empty_call_as_none_then_systemexit(self):
        with self.assertRaises(SystemExit):
            cli(args=None)

    def test_every_alias_names_a_command(self):
        self.assertTrue(set(ALIAS_TO_COMMAND.values()) <= set(COMMANDS))

    @parameterized.expand([[[]], [["train"]], [["unknown-command"]], [["eval", "--ckpt", "x.pth"]]])
    def test_usage_errors_exit_2(self, argv):
        self.assertEqual(dispatch(argv), 2)


class TestDispatch(TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.data = make_image_folder(os.path.join(self.tmp.name, "data"), classes=2, per_class=2)

    def tearDown(self):
        self.tmp.cleanup()

    def path(self, *parts):
        return os.path.join(self.tmp.name, *parts)

    def train_args(self, *extra):
        return [
            "train", "--data", self.data, "--out", self.path("run", "gen.pth"), "--iters", "2",
            "--train.batch_size", "2", "--data.resolution", "32", "--generator.base_width", "8",
            "--train.device", "cpu", "--monitor.size", "2", *SMALL_MODEL, *QUIET, *extra,
        ]

    def tiny_checkpoint(self):
        handle = ingest(self.data, resolution=32)
        ckpt = train(tiny_train_config(max_iters=1), handle, tiny_surrogate())
        return save_checkpoint(ckpt, self.path("tiny.pth"))

    def test_train_writes_checkpoint_log_and_manifest(self):
        self.assertEqual(dispatch(self.train_args()), 0)
        ckpt = load_checkpoint(self.path("run", "gen.pth"))
        self.assertEqual(ckpt.step, 2)
        self.assertEqual(ckpt.surrogate["feature_layer"], 3)
        with open(self.path("run", "gen.events.jsonl")) as f:
            self.assertEqual(len(f.readlines()), 2)
        with open(self.path("run", "gen.manifest.json")) as f:
            self.assertEqual(json.load(f)["command"], "train")

    def test_train_resume_continues(self):
        self.assertEqual(dispatch(self.train_args()), 0)
        resumed = self.train_args("--train.resume", self.path("run", "gen.pth"), "--iters", "3")
        resumed[resumed.index("--out") + 1] = self.path("run", "resumed.pth")
        self.assertEqual(dispatch(resumed), 0)
        self.assertEqual(load_checkpoint(self.path("run", "resumed.pth")).step, 3)

    def test_missing_data_exits_3(self):
        args = self.train_args()
        args[args.index("--data") + 1] = self.path("missing")
        self.assertEqual(dispatch(args), 3)

    @parameterized.expand([[["--eps", "-1"]], [["--tau", "3"]], [["--surrogate.layer", "99"]]])
    def test_bad_values_exit_2(self, extra):
        self.assertEqual(dispatch(self.train_args(*extra)), 2)

    def test_eval_and_analyze(self):
        ckpt = self.tiny_checkpoint()
        report = self.path("report")
        code = dispatch(
            ["eval", "--ckpt", ckpt, "--data", self.data, "--victims", "squeezenet1_1", "--eps", "0,10",
             "--resolution", "32", "--models.random_init", "--eval.device", "cpu", "--eval.dump_records",
             "--defense", "bdr:4", "--report", report, *QUIET]
        )
        self.assertEqual(code, 0)
        with open(os.path.join(report, "sweep.json")) as f:
            self.assertEqual(json.load(f)["epsilons"], [0.0, 10.0])
        with open(os.path.join(report, "eps_0", "summary.json")) as f:
            self.assertEqual(json.load(f)["defenses"], ["bdr:4"])

        figs = self.path("figs")
        code = dispatch(
            ["analyze", "--ckpt", ckpt, "--ckpt-b", ckpt, "--images", self.data, "--blocks", "1-3",
             "--out", figs, "--resolution", "32", "--analyze.limit", "2", "--analyze.device", "cpu", *QUIET]
        )
        self.assertEqual(code, 0)
        with open(os.path.join(figs, "manifest.json")) as f:
            manifest = json.load(f)
        self.assertEqual(manifest["blocks"], [1, 2, 3])
        masks = [e for e in manifest["figures"] if e["kind"] == "diff"]
        self.assertEqual(len(masks), 6)
        self.assertTrue(all(e["fraction"] == 0.0 for e in masks))

    def test_eval_without_any_victim_exits_4(self):
        ckpt = self.tiny_checkpoint()
        code = dispatch(
            ["eval", "--ckpt", ckpt, "--data", self.data, "--victims", "not_a_model", "--resolution", "32",
             "--eval.device", "cpu", "--report", self.path("report"), *QUIET]
        )
        self.assertEqual(code, 4)

    def test_metrics_recomputes_from_records(self):
        records_dir = self.path("records")
        write_records(
            make_records(range(5), [0, 0, 1, 1, 2], [0, 1, 1, 2, 2], [1, 1, 0, 1, 2]),
            os.path.join(records_dir, "victim_x.csv"),
        )
        out = self.path("recomputed.json")
        self.assertEqual(dispatch(["metrics", "--records", records_dir, "--out", out]), 0)
        with open(out) as f:
            metrics = json.load(f)["victim_x"]
        self.assertAlmostEqual(metrics["accuracy"], 0.4)
        self.assertAlmostEqual(metrics["asr"], 2 / 3)
        self.assertAlmostEqual(metrics["fr"], 0.6)
        self.assertAlmostEqual(metrics["acr"], 0.5)

    def test_metrics_without_records_exits_3(self):
        os.makedirs(self.path("empty"))
        self.assertEqual(dispatch(["m", "--records", self.path("empty")]), 3)

    def eval_args(self, ckpt, report, *extra):
        return [
            "eval", "--ckpt", ckpt, "--data", self.data, "--victims", "squeezenet1_1", "--resolution", "32",
            "--models.random_init", "--eval.device", "cpu", "--report", report, *QUIET, *extra,
        ]

    def test_eval_label_outside_victim_classes_exits_3(self):
        ckpt = self.tiny_checkpoint()
        label_map = self.path("labels.json")
        with open(label_map, "w") as f:
            json.dump({"class_00": 0, "class_01": 1000}, f)
        code = dispatch(self.eval_args(ckpt, self.path("report"), "--data.label_map", label_map))
        self.assertEqual(code, 3)

    def test_metrics_recomputed_from_dump_equal_eval_reports(self):
        ckpt = self.tiny_checkpoint()
        report = self.path("report")
        self.assertEqual(dispatch(self.eval_args(ckpt, report, "--eps", "10", "--eval.dump_records")), 0)
        out = self.path("recomputed.json")
        self.assertEqual(dispatch(["metrics", "--records", os.path.join(report, "records"), "--out", out]), 0)
        with open(os.path.join(report, "squeezenet1_1.json")) as f:
            evaluated = json.load(f)
        with open(out) as f:
            recomputed = json.load(f)["squeezenet1_1"]
        self.assertEqual(recomputed, evaluated["metrics"])
        self.assertIn("psnr", evaluated)

    def test_eval_seed_trials(self):
        ckpt = self.tiny_checkpoint()
        report = self.path("report")
        self.assertEqual(dispatch(self.eval_args(ckpt, report, "--eval.seeds", "0,1", "--defense", "rp")), 0)
        with open(os.path.join(report, "seeds.json")) as f:
            document = json.load(f)
        self.assertEqual(document["seeds"], [0, 1])
        self.assertIn("accuracy_std", document["table"]["squeezenet1_1"])

    def test_eval_seed_trials_with_sweep_exit_2(self):
        ckpt = self.tiny_checkpoint()
        code = dispatch(self.eval_args(ckpt, self.path("report"), "--eval.seeds", "0,1", "--eps", "4,10"))
        self.assertEqual(code, 2)

    def test_data_root_from_config_file(self):
        config_path = self.path("train.yaml")
        with open(config_path, "w") as f:
            yaml.safe_dump({"data": {"root": self.data}}, f)
        args = self.train_args("--config", config_path)
        index = args.index("--data")
        del args[index:index + 2]
        self.assertEqual(dispatch(args), 0)
        self.assertEqual(load_checkpoint(self.path("run", "gen.pth")).step, 2)

    def test_missing_data_everywhere_exits_2(self):
        args = self.train_args()
        index = args.index("--data")
        del args[index:index + 2]
        self.assertEqual(dispatch(args), 2)
