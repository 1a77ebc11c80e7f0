# Dumps a program's syntax tree as nested JSON arrays: [label, child, ...].
# Expression contexts (Load/Store/Del) are omitted; identifiers and constants
# are folded into the node label.
import ast
import json
import sys

_CONTEXTS = (ast.Load, ast.Store, ast.Del)


def _label(node):
    name = type(node).__name__
    for field in ("id", "name", "attr", "arg", "module"):
        value = getattr(node, field, None)
        if isinstance(value, str):
            return name + ":" + value
    if isinstance(node, ast.Constant):
        return name + ":" + repr(node.value)
    if isinstance(node, ast.alias):
        return name + ":" + node.name
    return name


def convert(node):
    children = [convert(c) for c in ast.iter_child_nodes(node) if not isinstance(c, _CONTEXTS)]
    return [_label(node)] + children


def main():
    source = sys.stdin.read()
    try:
        tree = ast.parse(source)
    except SyntaxError as exc:
        print("ERR SyntaxError: %s" % " ".join(str(exc).split()))
        return
    print("OK " + json.dumps(convert(tree)))


main()
