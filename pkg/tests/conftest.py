import os
import sys

import torch

# intra-op threading beyond the available cores slows the small networks
# used in these tests down dramatically
torch.set_num_threads(max(1, min(4, os.cpu_count() or 1)))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo one verdict line per acceptance criterion that ran."""
    for name, module in sys.modules.items():
        if name.rpartition(".")[2] == "test_acceptance":
            verdicts = getattr(module, "VERDICTS", None)
            if verdicts:
                terminalreporter.write_sep("-", "acceptance criteria")
                for line in verdicts:
                    terminalreporter.write_line(line)
            break
