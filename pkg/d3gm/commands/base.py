import logging
from pathlib import Path

from .. import __version__
from ..errors import ConfigError
from ..utils import sha256_file, write_csv, write_json

log = logging.getLogger("d3gm")


FORMATS = ("csv", "json")


class RunOutput:
    """Collects the files a command writes and describes them in manifest.json.

    Tables go out only in the requested formats; the manifest is always written.
    """

    def __init__(self, directory, formats=FORMATS):
        unknown = [f for f in formats if f not in FORMATS]
        if unknown:
            raise ConfigError(f"Unknown output format(s) {unknown}, expected a subset of: {', '.join(FORMATS)}")
        self.dir = Path(directory)
        self.formats = tuple(formats)
        self.files = []

    def wants(self, fmt):
        return fmt in self.formats

    def csv(self, name, header, rows):
        if not self.wants("csv"):
            return None
        path = write_csv(self.dir / name, header, rows)
        self.files.append(path)
        return path

    def json(self, name, obj):
        if not self.wants("json"):
            return None
        path = write_json(self.dir / name, obj)
        self.files.append(path)
        return path

    def add(self, path):
        self.files.append(Path(path))

    def manifest(self, cfg):
        outputs = [{"path": p.relative_to(self.dir).as_posix(), "sha256": sha256_file(p)} for p in self.files]
        return write_json(
            self.dir / "manifest.json",
            {
                "command": cfg.command,
                "version": __version__,
                "config": cfg.resolved(),
                "config_sha256": cfg.sha256(),
                "outputs": outputs,
            },
        )


class Command:
    NAME = None
    HELP = ""
    WRITES_OUTPUT = True

    def run(self, cfg, out):
        raise NotImplementedError


class ShowConfig(Command):
    NAME = "show-config"
    HELP = "Print the resolved configuration"
    WRITES_OUTPUT = False

    def run(self, cfg, out):
        return cfg.resolved()
