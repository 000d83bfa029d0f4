"""A ``jamaica serve`` child process for restart and hard-kill tests."""

import signal
import socket
import subprocess
import sys
import time

import requests


def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


class Serve:
    """A ``jamaica serve`` child process."""

    def __init__(self, data_dir, port=None):
        self.port = port or free_port()
        self.addr = f"127.0.0.1:{self.port}"
        self.proc = subprocess.Popen(
            [sys.executable, "-m", "jamaica", "--addr", self.addr, "--data-dir", str(data_dir),
             "serve"], stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
        deadline = time.monotonic() + 20
        while time.monotonic() < deadline:
            if self.proc.poll() is not None:
                return
            try:
                requests.get(f"http://{self.addr}/v1/health", timeout=1)
                return
            except requests.ConnectionError:
                time.sleep(0.05)
        raise RuntimeError("server did not come up")

    def url(self, path):
        return f"http://{self.addr}{path}"

    def kill(self):
        self.proc.send_signal(signal.SIGKILL)
        self.proc.wait(10)

    def stop(self):
        self.proc.terminate()
        self.proc.wait(10)
