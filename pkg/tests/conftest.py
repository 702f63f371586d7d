import io

import numpy as np
import pytest

IOT23_FIELDS = ("ts\tuid\tid.orig_h\tid.orig_p\tid.resp_h\tid.resp_p\tproto\tservice\tduration\torig_bytes\t"
                "resp_bytes\tconn_state\tlocal_orig\tlocal_resp\tmissed_bytes\thistory\torig_pkts\torig_ip_bytes\t"
                "resp_pkts\tresp_ip_bytes\ttunnel_parents   label   detailed-label")

IOT23_HEADER = (
    "#separator \\x09\n"
    "#set_separator\t,\n"
    "#empty_field\t(empty)\n"
    "#unset_field\t-\n"
    "#path\tconn\n"
    "#open\t2018-05-09-15-30-31\n"
    "#fields\t" + IOT23_FIELDS + "\n"
    "#types\ttime\tstring\taddr\tport\taddr\tport\tenum\tstring\tinterval\tcount\tcount\tstring\tbool\tbool\t"
    "count\tstring\tcount\tcount\tcount\tcount\tset[string]   string   string\n"
)

# two rows in the pristine IoT-23 layout: labels packed into the last tab field
IOT23_ROWS = (
    "1525879831.015811\tCUmrqr4svHuSXJy5z7\t192.168.100.103\t51524\t65.127.233.163\t23\ttcp\t-\t2.999051\t0\t0\t"
    "S0\t-\t-\t0\tS\t3\t180\t0\t0\t(empty)   Malicious   PartOfAHorizontalPortScan\n"
    "1525879832.500000\tCH98aB3s1kJeb4Sxd2\t192.168.100.103\t44236\t192.168.100.1\t53\tudp\tdns\t-\t-\t-\t"
    "S0\t-\t-\t0\tD\t1\t62\t0\t0\t(empty)   Benign   -\n"
)


def iot23_text(rows: str = IOT23_ROWS, close: bool = True) -> str:
    return IOT23_HEADER + rows + ("#close\t2018-05-09-15-31-00\n" if close else "")


@pytest.fixture
def iot23_stream():
    return io.StringIO(iot23_text())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import acceptance_log

    if acceptance_log.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_log.lines():
            terminalreporter.write_line(line)
