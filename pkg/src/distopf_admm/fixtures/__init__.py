"""Small bundled feeders used by the tests and the CLI examples."""

from importlib import resources

from ..feeder import Feeder, parse_feeder


def fixture_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files(__package__).iterdir() if p.name.endswith(".json"))


def fixture_text(name: str) -> str:
    return resources.files(__package__).joinpath(f"{name}.json").read_text(encoding="utf-8")


def fixture_path(name: str):
    return resources.files(__package__).joinpath(f"{name}.json")


def load_fixture(name: str) -> Feeder:
    return parse_feeder(fixture_text(name))
