import os

from flask import Flask, request

DB_PASSWORD = "hunter2"

app = Flask(__name__)


@app.route("/calc")
def calc():
    # TODO: validate the expression before evaluating it
    expr = request.args.get("expr", "0")
    return str(eval(expr))


@app.route("/items")
def items():
    limit = int(request.args.get("limit", "10"))
    return {"items": list(range(limit))}


if __name__ == "__main__":
    app.run(port=int(os.environ.get("PORT", "8000")))
