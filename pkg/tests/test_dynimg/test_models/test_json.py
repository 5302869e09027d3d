# noqa: D100
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from dynimg.models.json import DataClassJSONMixin, dumps, write_json


@dataclass
class MockDataClass(DataClassJSONMixin):  # noqa: D101
    test: set
    where: Path = Path("runs")
    score: float = math.nan


class TestDataClassJSONMixin:  # noqa: D101
    obj = MockDataClass(test={"b", "a"})

    def test_to_json(self):  # noqa: D102
        expected = '{"score":null,"test":["a","b"],"where":"runs"}'

        assert self.obj.to_json(decode=True, indent=False) == expected
        assert self.obj.to_json(decode=False, indent=False) == expected.encode()

    def test_to_dict(self):  # noqa: D102
        expected = {"score": None, "test": ["a", "b"], "where": "runs"}

        assert self.obj.to_dict() == expected

    def test_numpy_and_sorted_keys(self):  # noqa: D102
        assert dumps({"z": np.arange(2), "a": 1}, indent=False) == b'{"a":1,"z":[0,1]}'

    def test_write_json(self, tmp_path):  # noqa: D102
        path = tmp_path / "out.json"

        write_json({"k": 2}, path)

        assert path.read_bytes() == b'{\n  "k": 2\n}\n'

    def test_nested_dataclass_sorted(self):  # noqa: D102
        @dataclass
        class Outer(DataClassJSONMixin):
            zeta: MockDataClass
            alpha: int = 1

        out = Outer(zeta=MockDataClass(test=set())).to_json(indent=False)

        assert out == '{"alpha":1,"zeta":{"score":null,"test":[],"where":"runs"}}'
