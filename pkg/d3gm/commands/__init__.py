from .base import ShowConfig
from .cocycle import Cocycle
from .compare import Compare
from .lyapunov import Lyapunov
from .restore import TrainAndRestore
from .simulate import Simulate
from .tdd import Tdd

COMMANDS = {}

COMMANDS.update(
    {
        "simulate": Simulate,
        "cocycle": Cocycle,
        "tdd": Tdd,
        "train-and-restore": TrainAndRestore,
        "compare": Compare,
        "lyapunov": Lyapunov,
        "show-config": ShowConfig,
    }
)
