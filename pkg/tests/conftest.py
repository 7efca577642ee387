import io
from pathlib import Path

import pytest

from kdchain.gateway import Message, PromptBundle, prompt_fingerprint
from kdchain.kgstore import load_graph

# Small hand-checked world reused across module tests.
TOY_GRAPH_TSV = """\
paris\tcapital_of\tfrance\tParis
lyon\tlocated_in\tfrance\tLyon
berlin\tcapital_of\tgermany\tBerlin
munich\tlocated_in\tgermany\tMunich
amsterdam\tcapital_of\tnetherlands\tAmsterdam
france\tpopulation\t68000000\tFrance
germany\tpopulation\t84000000\tGermany
netherlands\tpopulation\t18000000\tNetherlands
france\tcurrency\t"Euro"
germany\tcurrency\t"Euro"
france\tborders\tgermany
germany\tborders\tnetherlands
rhine\tflows_through\tgermany\tRhine
rhine\tflows_through\tnetherlands
seine\tflows_through\tfrance\tSeine
netherlands\tlabel\t"Holland"
germany\tlabel\t"Deutschland"
"""


@pytest.fixture
def toy_graph():
    return load_graph(io.StringIO(TOY_GRAPH_TSV))


def user_fingerprint(text: str) -> str:
    return prompt_fingerprint(PromptBundle((Message("user", text),)))


def bundle_fingerprint(messages) -> str:
    return prompt_fingerprint(PromptBundle(tuple(Message(r, c) for r, c in messages)))


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    from importlib import resources

    return Path(str(resources.files("kdchain") / "fixtures"))
