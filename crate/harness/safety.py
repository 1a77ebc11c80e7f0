# Lists the dotted module/attribute paths a program references.
# Reads program source on stdin; prints `OK <json list>` or `ERR <class>: <message>`.
import ast
import json
import sys


def _dotted(node):
    parts = []
    while isinstance(node, ast.Attribute):
        parts.append(node.attr)
        node = node.value
    if isinstance(node, ast.Name):
        parts.append(node.id)
        return ".".join(reversed(parts))
    return None


def _literal_str(node):
    if isinstance(node, ast.Constant) and isinstance(node.value, str):
        return node.value
    return None


def references(tree):
    found = set()
    for node in ast.walk(tree):
        if isinstance(node, ast.Import):
            for alias in node.names:
                found.add(alias.name)
        elif isinstance(node, ast.ImportFrom):
            if node.module:
                found.add(node.module)
                for alias in node.names:
                    found.add(node.module + "." + alias.name)
        elif isinstance(node, ast.Attribute):
            path = _dotted(node)
            if path:
                found.add(path)
        elif isinstance(node, ast.Call):
            callee = _dotted(node.func)
            if callee in ("__import__", "importlib.import_module") and node.args:
                name = _literal_str(node.args[0])
                if name:
                    found.add(name)
    return sorted(found)


def main():
    source = sys.stdin.read()
    try:
        tree = ast.parse(source)
    except SyntaxError as exc:
        print("ERR SyntaxError: %s" % " ".join(str(exc).split()))
        return
    print("OK " + json.dumps(references(tree)))


main()
