# tests/test_run_manifest.py
import tempfile
import unittest
from importlib import metadata
from unittest.mock import patch

import os
import sys

# Add the src directory to the Python path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '../src')))

from src import config
from src.run_manifest import (RunManifest, canonical_json, config_digest, file_digest, package_versions,
                              sha256_hex)

EMPTY_SHA256 = "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"


class TestDigests(unittest.TestCase):

    def test_known_digest(self):
        self.assertEqual(sha256_hex(b""), EMPTY_SHA256)
        with self.assertRaises(ValueError):
            sha256_hex(None)

    def test_key_order_does_not_change_the_digest(self):
        a = {"command": "simulate", "system": {"N_t": 4, "kappa_MHz": 25.0}}
        b = {"system": {"kappa_MHz": 25.0, "N_t": 4}, "command": "simulate"}
        self.assertEqual(canonical_json(a), canonical_json(b))
        self.assertEqual(config_digest(a), config_digest(b))
        self.assertNotEqual(config_digest(a), config_digest({"command": "validate"}))
        with self.assertRaises(ValueError):
            canonical_json(["simulate"])

    def test_file_digest_matches_bytes_digest(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "pulse.json")
            with open(path, "wb") as f:
                f.write(b"{\"drives\": {}}\n")
            self.assertEqual(file_digest(path), sha256_hex(b"{\"drives\": {}}\n"))

    def test_versions(self):
        versions = package_versions()
        self.assertIn("numpy", versions)
        self.assertEqual(versions[config.APP_NAME], config.APP_VERSION)

    @patch("src.run_manifest.metadata.version", side_effect=metadata.PackageNotFoundError)
    def test_missing_package(self, _mock_version):
        self.assertEqual(package_versions()["scipy"], "not installed")


class TestRunManifest(unittest.TestCase):

    def setUp(self):
        """A manifest for a finished run and an output directory holding its artifacts."""
        self.tmp = tempfile.TemporaryDirectory()
        self.manifest = RunManifest(command="simulate", config_digest=config_digest({"command": "simulate"}),
                                    seed=3, threads=2)

    def tearDown(self):
        self.tmp.cleanup()

    def touch(self, name, payload=b""):
        with open(os.path.join(self.tmp.name, name), "wb") as f:
            f.write(payload)

    def test_peak_is_a_running_maximum(self):
        self.manifest.note_peak(12)
        self.manifest.note_peak(5)
        self.assertEqual(self.manifest.peak_live_matrices, 12)

    def test_finish_digests_only_run_artifacts(self):
        # Arrange
        self.touch(config.SUMMARY_JSON, b"{}")
        self.touch(config.TRAJECTORY_CSV)
        self.touch(config.MANIFEST_JSON)
        self.touch(config.LOG_FILE)
        self.touch(".tmp-pulse.json")
        os.mkdir(os.path.join(self.tmp.name, "sub"))

        # Act
        self.manifest.finish(config.EXIT_OK, self.tmp.name)

        # Assert
        self.assertEqual(sorted(self.manifest.outputs), [config.SUMMARY_JSON, config.TRAJECTORY_CSV])
        self.assertEqual(self.manifest.outputs[config.TRAJECTORY_CSV], EMPTY_SHA256)
        self.assertEqual(self.manifest.exit_code, 0)
        self.assertGreaterEqual(self.manifest.runtime_seconds, 0.0)

    def test_finish_without_output_directory(self):
        self.manifest.finish(config.EXIT_CONFIG_ERROR, os.path.join(self.tmp.name, "never-created"))
        self.assertEqual(self.manifest.outputs, {})
        self.assertEqual(self.manifest.exit_code, 2)

    def test_to_dict(self):
        data = self.manifest.to_dict()
        self.assertEqual(data["command"], "simulate")
        self.assertEqual(data["seed"], 3)
        self.assertEqual(data["threads"], 2)
        self.assertEqual(len(data["config_sha256"]), 64)
        self.assertIsNone(data["exit_code"])
        self.assertIn("outputs_sha256", data)
        self.assertIn("peak_live_matrices", data)


if __name__ == '__main__':
    unittest.main()
