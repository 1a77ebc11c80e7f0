# Executes a rendered driver script read from standard input and forwards
# exactly one protocol line to standard output:
#   OK <repr>
#   ERR <class>: <message>
# Output written by the program under test is captured and discarded.
import io
import os
import sys


def _one_line(text):
    return " ".join(str(text).split())


def _main():
    source = sys.stdin.read()
    real_stdout = sys.stdout
    captured = io.StringIO()
    sys.stdout = captured
    sys.stdin = io.StringIO()
    line = None
    try:
        code = compile(source, "<driver>", "exec")
        scope = {"__name__": "__main__", "__builtins__": __builtins__}
        exec(code, scope)
        text = captured.getvalue()
        if text.endswith("\n"):
            text = text[:-1]
        last = text.rsplit("\n", 1)[-1]
        if last.startswith("OK ") or last.startswith("ERR "):
            line = last
        else:
            line = "ERR ProtocolError: driver emitted no protocol line"
    except BaseException as exc:  # noqa: BLE001 - SystemExit and friends included
        line = "ERR %s: %s" % (type(exc).__name__, _one_line(exc))
    real_stdout.write(line + "\n")
    real_stdout.flush()
    os._exit(0)


_main()
