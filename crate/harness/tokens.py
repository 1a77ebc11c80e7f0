# Emits a program's lexical tokens as JSON pairs [kind, text] where kind is one
# of "op", "keyword", "name", "number", "string".
import io
import json
import keyword
import sys
import tokenize


def main():
    source = sys.stdin.read()
    out = []
    try:
        for tok in tokenize.generate_tokens(io.StringIO(source).readline):
            if tok.type == tokenize.OP:
                out.append(["op", tok.string])
            elif tok.type == tokenize.NAME:
                kind = "keyword" if keyword.iskeyword(tok.string) else "name"
                out.append([kind, tok.string])
            elif tok.type == tokenize.NUMBER:
                out.append(["number", tok.string])
            elif tok.type == tokenize.STRING:
                out.append(["string", tok.string])
    except (tokenize.TokenError, SyntaxError) as exc:
        print("ERR %s: %s" % (type(exc).__name__, " ".join(str(exc).split())))
        return
    print("OK " + json.dumps(out))


main()
