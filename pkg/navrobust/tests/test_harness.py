"""
Тесты для команд эксперимента: gen, train, eval, ablate, report
"""
import json
from pathlib import Path

import pandas as pd
import pytest

from navrobust.api import cli
from navrobust.apps.harness.models import (
    EVAL_SPLIT,
    SPLITS,
    SUPPORT_SPLIT,
    TRAIN_SPLIT,
    AblationConfig,
    DatasetConfig,
    DatasetManifest,
    ExperimentConfig,
    ManifestEntry,
    StyleGroup,
)
from navrobust.apps.harness.serializers import (
    ExperimentConfigSerializer,
    ManifestSerializer,
    ResultTableSerializer,
)
from navrobust.apps.metrics.models import ALL_METRICS
from navrobust.apps.planners.models import Paradigm, Variant
from navrobust.core.exceptions import MissingDataset, SchemaVersionMismatch, ValidationException
from navrobust.services.experiment_service import ExperimentService
from navrobust.services.report_service import ReportService, percent
from navrobust.tests.factories import TINY_SETTINGS

STYLES = ("origin", "heavy_rain", "heavy_snow", "dusk_sunset")


def small_config(output_dir, **changes) -> ExperimentConfig:
    values = dict(
        dataset=DatasetConfig(
            train_count=5,
            layout_count=6,
            support_fraction=0.5,
            seen_count=1,
            layout_seed_start=1000,
        ),
        styles=STYLES,
        planners=TINY_SETTINGS,
        ablation=AblationConfig(strategies=("frozen",), adapters=("2L",)),
        output_dir=str(output_dir),
        paradigms=(Paradigm.REGRESSION,),
        variants=(Variant.BASE,),
        baselines=("expert",),
    )
    values.update(changes)
    return ExperimentConfig(**values)


def result_frame(origin_epdms, unseen_epdms) -> pd.DataFrame:
    rows = []
    for group, values in (("origin", origin_epdms), ("unseen", unseen_epdms)):
        for epdms in values:
            row = {"paradigm": "regression", "variant": "base", "group": group}
            row.update({name: 1.0 for name in ALL_METRICS})
            row["epdms"] = epdms
            rows.append(row)
    return pd.DataFrame(rows)


@pytest.fixture
def generated(tmp_path):
    config = small_config(tmp_path / "run")
    return config, ExperimentService.cmd_gen(config)


class TestGen:
    """Тесты для генерации набора и манифеста"""

    def test_manifest_counts(self, generated):
        """Тест состава разбиений"""
        _, manifest = generated
        failed = set(manifest.failed_seeds)
        assert len(manifest.split(TRAIN_SPLIT)) == 5 - len(failed & set(range(5)))
        assert len(manifest.split(SUPPORT_SPLIT)) == len(manifest.support_seeds)
        assert len(manifest.split(EVAL_SPLIT)) == 3 * len(manifest.evaluation_seeds)
        assert len(manifest.seen_styles) == 1
        assert len(manifest.unseen_styles) == 2
        assert "origin" not in manifest.seen_styles + manifest.unseen_styles

    def test_seeds_disjoint(self, generated):
        """Тест непересекающихся зерен разбиений"""
        _, manifest = generated
        seeds = {name: {e.geometry_seed for e in manifest.split(name)} for name in SPLITS}
        assert not seeds[TRAIN_SPLIT] & (seeds[SUPPORT_SPLIT] | seeds[EVAL_SPLIT])
        assert not seeds[SUPPORT_SPLIT] & seeds[EVAL_SPLIT]
        assert all(seed >= 1000 for seed in seeds[EVAL_SPLIT])

    def test_styles_by_split(self, generated):
        """Тест стилей: train - исходный, support - видимые, eval - исходный и невиданные"""
        _, manifest = generated
        assert {e.style for e in manifest.split(TRAIN_SPLIT)} == {"origin"}
        assert {e.style for e in manifest.split(SUPPORT_SPLIT)} == set(manifest.seen_styles)
        assert {e.style for e in manifest.split(EVAL_SPLIT)} == {"origin"} | set(
            manifest.unseen_styles
        )

    def test_entries_load(self, generated):
        """Тест чтения файлов набора с проверкой sha256"""
        config, manifest = generated
        entries = manifest.split(EVAL_SPLIT)
        scenarios = ExperimentService.load_entries(config, entries)
        assert [s.style.name for s in scenarios] == [e.style for e in entries]
        assert [s.geometry_seed.seed for s in scenarios] == [e.geometry_seed for e in entries]

    def test_reproducible_hash(self, tmp_path, generated):
        """Тест одинакового хэша набора в разных каталогах"""
        _, manifest = generated
        other = ExperimentService.cmd_gen(small_config(tmp_path / "other"))
        assert other.dataset_hash == manifest.dataset_hash

    def test_tampered_file(self, generated):
        """Тест измененного файла сценария"""
        config, manifest = generated
        entry = manifest.split(TRAIN_SPLIT)[0]
        path = ExperimentService.output(config) / "dataset" / entry.path
        path.write_bytes(path.read_bytes() + b"\n")
        with pytest.raises(ValidationException):
            ExperimentService.load_entries(config, [entry])

    def test_missing_manifest(self, tmp_path):
        """Тест команды без сгенерированного набора"""
        with pytest.raises(MissingDataset):
            ExperimentService.load_manifest(small_config(tmp_path))

    def test_training_entries(self, generated):
        """Тест обучающей выборки: DR добавляет опорный набор"""
        _, manifest = generated
        base = ExperimentService.training_entries(manifest, Variant.BASE)
        dr = ExperimentService.training_entries(manifest, Variant.DR)
        assert len(dr) == len(base) + len(manifest.split(SUPPORT_SPLIT))


class TestSummarize:
    """Тесты для сводной таблицы и долей падения"""

    def test_drop_rate(self):
        """Тест доли падения по средним группам"""
        table = ExperimentService.summarize(result_frame([0.8, 0.89], [0.7, 0.82]))
        origin = table.row("regression", "base", StyleGroup.ORIGIN)
        assert origin.epdms == pytest.approx(0.845)
        assert origin.count == 2
        assert table.drop_rate("regression", "base") == pytest.approx(0.085 / 0.845)

    def test_table_frame(self):
        """Тест процентов в таблице отчета"""
        table = ExperimentService.summarize(result_frame([0.8, 0.89], [0.7, 0.82]))
        frame = ReportService.table_frame(table).set_index("group")
        assert frame.loc["origin", "epdms"] == "84.5"
        assert frame.loc["origin", "drop_rate"] == ""
        assert frame.loc["unseen", "drop_rate"] == "10.1"
        assert frame.loc["unseen", "nc"] == "100.0"

    def test_zero_origin(self, caplog):
        """Тест нулевого EPDMS исходного стиля"""
        table = ExperimentService.summarize(result_frame([0.0], [0.5]))
        assert table.drop_rates["regression/base"] is None
        assert "равен нулю" in caplog.text
        assert percent(None) == ""

    def test_serializer(self, tmp_path):
        """Тест записи и чтения таблицы результатов"""
        table = ExperimentService.summarize(result_frame([0.8, 0.9], [0.6]))
        path = tmp_path / "results.json"
        ResultTableSerializer.write(table, path, extra={"reactive": False})
        restored = ResultTableSerializer.read(path)
        assert restored.rows == table.rows
        assert restored.drop_rates == pytest.approx(table.drop_rates)

    def test_missing_results(self, tmp_path):
        """Тест отчета без результатов оценки"""
        with pytest.raises(MissingDataset):
            ResultTableSerializer.read(tmp_path / "results.json")


class TestFileSchemas:
    """Тесты для схем манифеста и таблицы результатов"""

    @staticmethod
    def manifest_data():
        manifest = DatasetManifest(
            entries=(ManifestEntry(TRAIN_SPLIT, 3, "origin", "train/3_origin.json", "ab" * 32),),
            support_seeds=(1000,),
            evaluation_seeds=(1001, 1002),
            seen_styles=("heavy_rain",),
            unseen_styles=("heavy_snow", "dusk_sunset"),
            dataset_hash="cd" * 32,
        )
        return manifest, ManifestSerializer.to_representation(manifest)

    def test_manifest_restore(self):
        """Тест восстановления манифеста из JSON-представления"""
        manifest, data = self.manifest_data()
        assert ManifestSerializer.to_internal_value(json.loads(json.dumps(data))) == manifest

    @pytest.mark.parametrize(
        "path, value",
        [
            (("entries", 0, "geometry_seed"), "3"),
            (("entries", 0, "digest"), "ab"),
            (("split", "support_seeds"), 1000),
            (("dataset_hash",), None),
        ],
    )
    def test_manifest_rejects(self, path, value):
        """Тест неверного типа и лишнего ключа в манифесте"""
        _, data = self.manifest_data()
        target = data
        for key in path[:-1]:
            target = target[key]
        target[path[-1]] = value
        with pytest.raises(ValidationException, match="manifest"):
            ManifestSerializer.to_internal_value(data)

    def test_manifest_version(self):
        """Тест неподдерживаемой версии манифеста"""
        _, data = self.manifest_data()
        data["manifest_version"] = 2
        with pytest.raises(SchemaVersionMismatch):
            ManifestSerializer.to_internal_value(data)

    def test_result_row_keys(self):
        """Тест строки результата без подметрики"""
        table = ExperimentService.summarize(result_frame([0.8], [0.6]))
        data = ResultTableSerializer.to_representation(table, extra={"reactive": True})
        del data["rows"][0]["scores"]["ec"]
        with pytest.raises(ValidationException):
            ResultTableSerializer.to_internal_value(data)

    def test_result_group_enum(self):
        """Тест неизвестной группы стилей в таблице результатов"""
        table = ExperimentService.summarize(result_frame([0.8], [0.6]))
        data = ResultTableSerializer.to_representation(table)
        data["rows"][0]["group"] = "rare"
        with pytest.raises(ValidationException, match="group"):
            ResultTableSerializer.to_internal_value(data)


class TestCli:
    """Тесты для командной строки и кодов возврата"""

    @pytest.fixture(autouse=True)
    def quiet(self, monkeypatch):
        monkeypatch.setattr(cli, "configure_logging", lambda: None)

    def test_bad_config(self, tmp_path):
        """Тест некорректного файла конфигурации"""
        path = tmp_path / "config.json"
        path.write_text("{", encoding="utf-8")
        assert cli.main(["gen", "--config", str(path)]) == 2

    def test_unknown_key(self, tmp_path):
        """Тест неизвестного ключа конфигурации"""
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"config_version": 1, "epochs": 3}), encoding="utf-8")
        assert cli.main(["gen", "--config", str(path)]) == 2

    def test_train_without_dataset(self, tmp_path):
        """Тест обучения без набора"""
        assert cli.main(["train", "--out", str(tmp_path)]) == 3

    def test_gen_with_overrides(self, tmp_path):
        """Тест флагов поверх файла конфигурации"""
        path = tmp_path / "config.json"
        ExperimentConfigSerializer.write(small_config(tmp_path / "ignored"), path)
        out = tmp_path / "run"
        assert cli.main(["gen", "--config", str(path), "--out", str(out), "--seed", "3"]) == 0
        written = ExperimentConfigSerializer.read(out / "config.json")
        assert written.seed == 3
        assert Path(written.output_dir) == out
        assert (out / "dataset" / "manifest.json").exists()


class TestPipeline:
    """Тесты для полного прогона на малом наборе"""

    def test_gen_train_eval_report(self, tmp_path):
        """Тест gen -> train -> eval -> report"""
        config = small_config(tmp_path)
        ExperimentService.cmd_gen(config)
        checkpoints = ExperimentService.cmd_train(config)
        assert list(checkpoints) == ["regression/base"]
        assert checkpoints["regression/base"].exists()

        table = ExperimentService.cmd_eval(config)
        assert set(table.pairs()) == {("regression", "base"), ("baseline", "expert")}
        for row in table.rows:
            assert 0.0 <= row.epdms <= 1.0
            assert row.group in (StyleGroup.ORIGIN, StyleGroup.UNSEEN)
        expert = table.row("baseline", "expert", StyleGroup.ORIGIN)
        assert expert.scores["nc"] == pytest.approx(1.0)
        per_scenario = pd.read_csv(tmp_path / "results" / "per_scenario.csv")
        assert set(per_scenario["style"]) <= set(STYLES)
        assert (per_scenario["ec"] == 1.0).all()

        ExperimentService.cmd_ablate(config)
        ablation = json.loads(ExperimentService.ablation_path(config).read_text(encoding="utf-8"))
        arms = [(record["arm"], record["name"]) for record in ablation]
        assert arms == [("strategy", "frozen"), ("adapter", "2L")]

        files = ReportService.cmd_report(config)
        for key in ("csv", "json", "notes", "style_epdms", "drop_rates", "dispersion", "ablation"):
            assert files[key].exists()
        assert "EC" in files["notes"].read_text(encoding="utf-8")
        dispersion = pd.read_csv(files["dispersion"])
        constant = dispersion[dispersion["extractor"] == "constant_eye"]["dispersion"]
        assert (constant == 0.0).all()
        assert (tmp_path / "report" / "features" / "brittle_origin.png").exists()

    @pytest.mark.slow
    def test_all_paradigms(self, tmp_path):
        """Тест обучения и оценки всех парадигм и вариантов"""
        config = small_config(
            tmp_path, paradigms=tuple(Paradigm), variants=tuple(Variant), baselines=()
        )
        ExperimentService.cmd_gen(config)
        assert len(ExperimentService.cmd_train(config)) == 12
        table = ExperimentService.cmd_eval(config)
        assert len(table.pairs()) == 12
        assert len(table.drop_rates) == 12
        for paradigm in Paradigm:
            drop = table.drop_rates[f"{paradigm.value}/constant_eye"]
            assert drop is None or drop == pytest.approx(0.0, abs=1e-9)
