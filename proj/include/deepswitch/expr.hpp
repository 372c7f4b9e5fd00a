#pragma once
// Tiny expression language for payoff and cost fields in configs:
// +, -, *, parentheses, numeric literals, t, x1..xd, mean(x), max(x).

#include <cctype>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "deepswitch/common.hpp"

namespace deepswitch {

// Evaluated per row; x has the state dimension of the problem.
using FieldFn = std::function<double(double t, const double* x, int dim)>;

namespace expr_detail {

struct Node {
  enum class Op { constant, coord, time, mean, max, add, sub, mul, neg };
  Op op;
  double value = 0.0;
  int coord = 0;
  std::unique_ptr<Node> lhs, rhs;
};

struct Parser {
  const std::string& src;
  std::size_t pos = 0;

  explicit Parser(const std::string& s) : src(s) {}

  [[noreturn]] void fail(const std::string& why) const {
    throw config_error("expression error at offset " + std::to_string(pos) + " in \"" + src +
                       "\": " + why);
  }
  void skip_ws() {
    while (pos < src.size() && std::isspace(static_cast<unsigned char>(src[pos]))) ++pos;
  }
  bool eat(char c) {
    skip_ws();
    if (pos < src.size() && src[pos] == c) {
      ++pos;
      return true;
    }
    return false;
  }

  std::unique_ptr<Node> parse_expression() {
    auto node = parse_term();
    for (;;) {
      if (eat('+')) {
        auto n = std::make_unique<Node>();
        n->op = Node::Op::add;
        n->lhs = std::move(node);
        n->rhs = parse_term();
        node = std::move(n);
      } else if (eat('-')) {
        auto n = std::make_unique<Node>();
        n->op = Node::Op::sub;
        n->lhs = std::move(node);
        n->rhs = parse_term();
        node = std::move(n);
      } else {
        return node;
      }
    }
  }

  std::unique_ptr<Node> parse_term() {
    auto node = parse_factor();
    while (eat('*')) {
      auto n = std::make_unique<Node>();
      n->op = Node::Op::mul;
      n->lhs = std::move(node);
      n->rhs = parse_factor();
      node = std::move(n);
    }
    return node;
  }

  std::unique_ptr<Node> parse_factor() {
    skip_ws();
    if (pos >= src.size()) fail("unexpected end of input");
    char c = src[pos];
    if (c == '(') {
      ++pos;
      auto node = parse_expression();
      if (!eat(')')) fail("missing ')'");
      return node;
    }
    if (c == '-') {
      ++pos;
      auto n = std::make_unique<Node>();
      n->op = Node::Op::neg;
      n->lhs = parse_factor();
      return n;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      std::size_t used = 0;
      double v = std::stod(src.substr(pos), &used);
      pos += used;
      auto n = std::make_unique<Node>();
      n->op = Node::Op::constant;
      n->value = v;
      return n;
    }
    if (std::isalpha(static_cast<unsigned char>(c))) {
      std::size_t start = pos;
      while (pos < src.size() &&
             (std::isalnum(static_cast<unsigned char>(src[pos])) || src[pos] == '_'))
        ++pos;
      std::string word = src.substr(start, pos - start);
      if (word == "t") {
        auto n = std::make_unique<Node>();
        n->op = Node::Op::time;
        return n;
      }
      if (word == "mean" || word == "max") {
        if (!eat('(')) fail("expected '(' after " + word);
        skip_ws();
        if (pos >= src.size() || src[pos] != 'x') fail(word + " takes the state vector x");
        ++pos;
        if (!eat(')')) fail("missing ')' after " + word + "(x");
        auto n = std::make_unique<Node>();
        n->op = word == "mean" ? Node::Op::mean : Node::Op::max;
        return n;
      }
      if (word.size() >= 2 && word[0] == 'x') {
        int idx = 0;
        for (std::size_t i = 1; i < word.size(); ++i) {
          if (!std::isdigit(static_cast<unsigned char>(word[i])))
            fail("unknown identifier '" + word + "'");
          idx = idx * 10 + (word[i] - '0');
        }
        if (idx < 1) fail("coordinates are 1-based (x1..xd)");
        auto n = std::make_unique<Node>();
        n->op = Node::Op::coord;
        n->coord = idx - 1;
        return n;
      }
      fail("unknown identifier '" + word + "'");
    }
    fail(std::string("unexpected character '") + c + "'");
  }
};

inline double eval(const Node* n, double t, const double* x, int dim) {
  switch (n->op) {
    case Node::Op::constant: return n->value;
    case Node::Op::time: return t;
    case Node::Op::coord:
      if (n->coord >= dim)
        throw config_error("expression references x" + std::to_string(n->coord + 1) +
                           " but the state has dimension " + std::to_string(dim));
      return x[n->coord];
    case Node::Op::mean: {
      double s = 0.0;
      for (int k = 0; k < dim; ++k) s += x[k];
      return s / static_cast<double>(dim);
    }
    case Node::Op::max: {
      double m = x[0];
      for (int k = 1; k < dim; ++k) m = std::max(m, x[k]);
      return m;
    }
    case Node::Op::add: return eval(n->lhs.get(), t, x, dim) + eval(n->rhs.get(), t, x, dim);
    case Node::Op::sub: return eval(n->lhs.get(), t, x, dim) - eval(n->rhs.get(), t, x, dim);
    case Node::Op::mul: return eval(n->lhs.get(), t, x, dim) * eval(n->rhs.get(), t, x, dim);
    case Node::Op::neg: return -eval(n->lhs.get(), t, x, dim);
  }
  return 0.0;
}

}  // namespace expr_detail

inline FieldFn parse_field(const std::string& text) {
  expr_detail::Parser parser(text);
  std::shared_ptr<expr_detail::Node> root{parser.parse_expression().release()};
  parser.skip_ws();
  if (parser.pos != text.size()) parser.fail("trailing input");
  return [root](double t, const double* x, int dim) {
    return expr_detail::eval(root.get(), t, x, dim);
  };
}

}  // namespace deepswitch
