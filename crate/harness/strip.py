# Removes comments and module-level variable assignments from a program.
# Reads program source on stdin; prints `OK <json string>` with the new source.
import ast
import json
import sys

_ASSIGNMENTS = (ast.Assign, ast.AnnAssign, ast.AugAssign)


def _is_global_variable(stmt):
    if not isinstance(stmt, _ASSIGNMENTS):
        return False
    targets = stmt.targets if isinstance(stmt, ast.Assign) else [stmt.target]
    # an assignment that binds the entry point itself is part of the program
    return not any(isinstance(t, ast.Name) and t.id == "f" for t in targets)


def main():
    source = sys.stdin.read()
    try:
        tree = ast.parse(source)
    except SyntaxError as exc:
        print("ERR SyntaxError: %s" % " ".join(str(exc).split()))
        return
    tree.body = [stmt for stmt in tree.body if not _is_global_variable(stmt)]
    print("OK " + json.dumps(ast.unparse(tree)))


main()
