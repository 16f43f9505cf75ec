#include "freelab/ncpoly.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

namespace freelab {

// ---------------------------------------------------------------------------
// Words

std::vector<Word> enumerate_words(int d, int max_degree) {
  require(d >= 1 && max_degree >= 0, "enumerate_words: bad arguments");
  std::vector<Word> out{Word{}};
  std::vector<Word> layer{Word{}};
  for (int deg = 1; deg <= max_degree; ++deg) {
    std::vector<Word> next;
    for (const auto& w : layer)
      for (int j = 0; j < d; ++j) {
        Word e = w;
        e.push_back(j);
        next.push_back(std::move(e));
      }
    std::sort(next.begin(), next.end());
    out.insert(out.end(), next.begin(), next.end());
    layer = std::move(next);
  }
  return out;
}

Word reversed(const Word& w) { return Word(w.rbegin(), w.rend()); }

std::string word_to_string(const Word& w) {
  if (w.empty()) return "1";
  std::ostringstream os;
  for (std::size_t k = 0; k < w.size(); ++k) os << (k ? "*" : "") << "x" << (w[k] + 1);
  return os.str();
}

// ---------------------------------------------------------------------------
// Parser

namespace {

class TermParser {
 public:
  explicit TermParser(const std::string& s) : s_(s) {}

  std::vector<ParsedTerm> parse_expression() {
    std::vector<ParsedTerm> terms;
    skip_ws();
    if (at_end()) throw ConfigError("empty polynomial expression");
    bool first = true;
    while (!at_end()) {
      double sign = 1.0;
      skip_ws();
      if (peek() == '+' || peek() == '-') {
        sign = peek() == '-' ? -1.0 : 1.0;
        ++pos_;
      } else if (!first) {
        throw error("expected '+' or '-'");
      }
      first = false;
      ParsedTerm t = parse_term();
      t.coefficient *= sign;
      terms.push_back(std::move(t));
      skip_ws();
      if (!at_end() && peek() == ')') break;
    }
    return terms;
  }

  bool at_end() {
    skip_ws();
    return pos_ >= s_.size();
  }
  char peek() const { return pos_ < s_.size() ? s_[pos_] : '\0'; }
  std::size_t pos() const { return pos_; }
  void advance() { ++pos_; }

 private:
  ConfigError error(const std::string& what) const {
    return ConfigError("polynomial parse error at position " + std::to_string(pos_) + ": " + what +
                       " in \"" + s_ + "\"");
  }

  void skip_ws() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }

  ParsedTerm parse_term() {
    ParsedTerm t;
    parse_factor(t);
    for (;;) {
      skip_ws();
      if (peek() != '*') break;
      ++pos_;
      parse_factor(t);
    }
    return t;
  }

  void parse_factor(ParsedTerm& t) {
    skip_ws();
    const char c = peek();
    if (c == '(') {
      ++pos_;
      auto inner = parse_expression();
      skip_ws();
      if (peek() != ')') throw error("expected ')'");
      ++pos_;
      Complex sum = 0.0;
      for (const auto& it : inner) {
        if (!it.factors.empty()) throw error("parenthesized factors must be numeric");
        sum += it.coefficient;
      }
      t.coefficient *= sum;
      return;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      const double v = parse_number();
      if (peek() == 'i' && !std::isalnum(static_cast<unsigned char>(next_char()))) {
        ++pos_;
        t.coefficient *= Complex(0.0, v);
      } else {
        t.coefficient *= v;
      }
      return;
    }
    if (std::isalpha(static_cast<unsigned char>(c))) {
      std::string prefix;
      while (std::isalpha(static_cast<unsigned char>(peek()))) prefix += s_[pos_++];
      if (!std::isdigit(static_cast<unsigned char>(peek()))) {
        if (prefix == "i") {
          t.coefficient *= Complex(0.0, 1.0);
          return;
        }
        throw error("letter '" + prefix + "' needs an index");
      }
      int index = 0;
      while (std::isdigit(static_cast<unsigned char>(peek()))) index = index * 10 + (s_[pos_++] - '0');
      int power = 1;
      skip_ws();
      if (peek() == '^') {
        ++pos_;
        skip_ws();
        if (!std::isdigit(static_cast<unsigned char>(peek()))) throw error("expected exponent");
        power = 0;
        while (std::isdigit(static_cast<unsigned char>(peek()))) power = power * 10 + (s_[pos_++] - '0');
      }
      for (int k = 0; k < power; ++k) t.factors.push_back({prefix, index});
      return;
    }
    throw error(std::string("unexpected character '") + c + "'");
  }

  char next_char() const { return pos_ + 1 < s_.size() ? s_[pos_ + 1] : '\0'; }

  double parse_number() {
    const std::size_t start = pos_;
    while (std::isdigit(static_cast<unsigned char>(peek())) || peek() == '.') ++pos_;
    if (peek() == 'e' || peek() == 'E') {
      std::size_t save = pos_;
      ++pos_;
      if (peek() == '+' || peek() == '-') ++pos_;
      if (std::isdigit(static_cast<unsigned char>(peek()))) {
        while (std::isdigit(static_cast<unsigned char>(peek()))) ++pos_;
      } else {
        pos_ = save;
      }
    }
    try {
      return std::stod(s_.substr(start, pos_ - start));
    } catch (const std::exception&) {
      throw error("bad number");
    }
  }

  const std::string& s_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<ParsedTerm> parse_terms(const std::string& text) {
  TermParser p(text);
  auto terms = p.parse_expression();
  if (!p.at_end()) throw ConfigError("unbalanced ')' in \"" + text + "\"");
  return terms;
}

// ---------------------------------------------------------------------------
// NCPolynomial

NCPolynomial NCPolynomial::constant(int d, Complex c) {
  NCPolynomial p(d);
  p.add_term({}, c);
  return p;
}

NCPolynomial NCPolynomial::letter(int d, int j) {
  require(j >= 0 && j < d, "letter out of range");
  return monomial(d, Word{j});
}

NCPolynomial NCPolynomial::monomial(int d, Word w, Complex c) {
  for (int l : w) require(l >= 0 && l < d, "letter out of range");
  NCPolynomial p(d);
  p.add_term(w, c);
  return p;
}

NCPolynomial NCPolynomial::parse(const std::string& text, int d, const std::vector<std::string>& prefixes) {
  require(d >= 1, "parse: d must be positive");
  require(!prefixes.empty(), "parse: need at least one letter prefix");
  const int letters = d * static_cast<int>(prefixes.size());
  NCPolynomial p(letters);
  for (const auto& term : parse_terms(text)) {
    Word w;
    for (const auto& f : term.factors) {
      const auto it = std::find(prefixes.begin(), prefixes.end(), f.prefix);
      if (it == prefixes.end()) throw ConfigError("unknown letter '" + f.prefix + std::to_string(f.index) + "'");
      if (f.index < 1 || f.index > d)
        throw ConfigError("letter '" + f.prefix + std::to_string(f.index) + "' out of range 1.." + std::to_string(d));
      w.push_back(static_cast<int>(it - prefixes.begin()) * d + f.index - 1);
    }
    p.add_term(w, term.coefficient);
  }
  return p;
}

int NCPolynomial::degree() const {
  return terms_.empty() ? 0 : static_cast<int>(terms_.rbegin()->first.size());
}

Complex NCPolynomial::coefficient(const Word& w) const {
  const auto it = terms_.find(w);
  return it == terms_.end() ? Complex(0.0) : it->second;
}

void NCPolynomial::add_term(const Word& w, Complex c) {
  for (int l : w) require(l >= 0 && l < d_, "letter out of range");
  auto& slot = terms_[w];
  slot += c;
  if (std::abs(slot) < kPruneTol) terms_.erase(w);
}

void NCPolynomial::prune() {
  std::erase_if(terms_, [](const auto& kv) { return std::abs(kv.second) < kPruneTol; });
}

NCPolynomial NCPolynomial::operator+(const NCPolynomial& o) const {
  NCPolynomial out(std::max(d_, o.d_));
  out.terms_ = terms_;
  for (const auto& [w, c] : o.terms_) out.terms_[w] += c;
  out.prune();
  return out;
}

NCPolynomial NCPolynomial::operator-(const NCPolynomial& o) const { return *this + o * Complex(-1.0); }

NCPolynomial NCPolynomial::operator*(const NCPolynomial& o) const {
  NCPolynomial out(std::max(d_, o.d_));
  for (const auto& [w1, c1] : terms_)
    for (const auto& [w2, c2] : o.terms_) {
      Word w = w1;
      w.insert(w.end(), w2.begin(), w2.end());
      out.terms_[w] += c1 * c2;
    }
  out.prune();
  return out;
}

NCPolynomial NCPolynomial::operator*(Complex s) const {
  NCPolynomial out(d_);
  for (const auto& [w, c] : terms_) out.terms_[w] = c * s;
  out.prune();
  return out;
}

bool NCPolynomial::operator==(const NCPolynomial& o) const {
  const auto diff = *this - o;
  return diff.terms_.empty();
}

std::string NCPolynomial::to_string(const std::vector<std::string>& prefixes) const {
  if (terms_.empty()) return "0";
  const int block = prefixes.size() > 1 ? d_ / static_cast<int>(prefixes.size()) : d_;
  std::ostringstream os;
  os.precision(17);
  bool first = true;
  for (const auto& [w, c] : terms_) {
    if (c.imag() == 0.0) {
      if (first) os << c.real();
      else os << (c.real() < 0 ? " - " : " + ") << std::abs(c.real());
    } else {
      if (!first) os << " + ";
      os << "(" << c.real() << (c.imag() < 0 ? "-" : "+") << std::abs(c.imag()) << "i)";
    }
    for (int l : w) {
      const int b = block > 0 ? l / block : 0;
      os << "*" << prefixes[std::min<std::size_t>(b, prefixes.size() - 1)] << (l - b * block + 1);
    }
    first = false;
  }
  return os.str();
}

NCPolynomial star(const NCPolynomial& p) {
  NCPolynomial out(p.d());
  for (const auto& [w, c] : p.terms()) out.add_term(reversed(w), std::conj(c));
  return out;
}

bool is_selfadjoint(const NCPolynomial& p, double tol) {
  const auto diff = p - star(p);
  for (const auto& [w, c] : diff.terms())
    if (std::abs(c) > tol) return false;
  return true;
}

// ---------------------------------------------------------------------------
// TensorPolynomial

void TensorPolynomial::add_term(const Word& left, const Word& right, Complex c) {
  Key k{left, right};
  auto& slot = terms_[k];
  slot += c;
  if (std::abs(slot) < kPruneTol) terms_.erase(k);
}

TensorPolynomial TensorPolynomial::operator+(const TensorPolynomial& o) const {
  TensorPolynomial out(std::max(d_, o.d_));
  out.terms_ = terms_;
  for (const auto& [k, c] : o.terms_) out.add_term(k.first, k.second, c);
  return out;
}

TensorPolynomial TensorPolynomial::operator*(Complex s) const {
  TensorPolynomial out(d_);
  for (const auto& [k, c] : terms_) out.add_term(k.first, k.second, c * s);
  return out;
}

bool TensorPolynomial::operator==(const TensorPolynomial& o) const {
  const auto diff = *this + o * Complex(-1.0);
  return diff.terms_.empty();
}

TensorPolynomial free_difference_quotient(const NCPolynomial& p, int j) {
  require(j >= 0 && j < p.d(), "free_difference_quotient: letter out of range");
  TensorPolynomial out(p.d());
  for (const auto& [w, c] : p.terms())
    for (std::size_t k = 0; k < w.size(); ++k)
      if (w[k] == j) out.add_term(Word(w.begin(), w.begin() + static_cast<long>(k)),
                                  Word(w.begin() + static_cast<long>(k) + 1, w.end()), c);
  return out;
}

NCPolynomial cyclic_derivative(const NCPolynomial& p, int j) {
  require(j >= 0 && j < p.d(), "cyclic_derivative: letter out of range");
  NCPolynomial out(p.d());
  for (const auto& [w, c] : p.terms())
    for (std::size_t k = 0; k < w.size(); ++k)
      if (w[k] == j) {
        Word rot(w.begin() + static_cast<long>(k) + 1, w.end());
        rot.insert(rot.end(), w.begin(), w.begin() + static_cast<long>(k));
        out.add_term(rot, c);
      }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

WordEvaluator::WordEvaluator(std::span<const CMatrix> letters) : letters_(letters.begin(), letters.end()) {
  require(!letters_.empty(), "WordEvaluator needs at least one letter");
  n_ = static_cast<int>(letters_.front().rows());
  for (const auto& m : letters_) require(m.rows() == n_ && m.cols() == n_, "WordEvaluator: dimension mismatch");
}

WordEvaluator::WordEvaluator(const MatrixTuple& x) : WordEvaluator(std::span<const CMatrix>(x.raw())) {}

const CMatrix& WordEvaluator::word(const Word& w) {
  auto it = cache_.find(w);
  if (it != cache_.end()) return it->second;
  CMatrix value;
  if (w.empty()) {
    value = CMatrix::Identity(n_, n_);
  } else {
    const int last = w.back();
    if (last < 0 || last >= letter_count())
      throw InvalidArgument("letter x" + std::to_string(last + 1) + " out of range for a " +
                            std::to_string(letter_count()) + "-tuple");
    const Word prefix(w.begin(), w.end() - 1);
    value = prefix.empty() ? letters_[last] : CMatrix(word(prefix) * letters_[last]);
  }
  return cache_.emplace(w, std::move(value)).first->second;
}

CMatrix WordEvaluator::polynomial(const NCPolynomial& p) {
  CMatrix acc = CMatrix::Zero(n_, n_);
  for (const auto& [w, c] : p.terms()) acc += c * word(w);
  return acc;
}

Complex WordEvaluator::trace(const NCPolynomial& p) {
  Complex acc = 0.0;
  for (const auto& [w, c] : p.terms()) acc += c * trace_n(word(w));
  return acc;
}

CMatrix evaluate(const NCPolynomial& p, const MatrixTuple& x) {
  WordEvaluator ev(x);
  return ev.polynomial(p);
}

Complex evaluate_trace(const NCPolynomial& p, const MatrixTuple& x) {
  WordEvaluator ev(x);
  const Complex t = ev.trace(p);
  if (is_selfadjoint(p) && std::abs(t.imag()) >= 1e-10 * (1.0 + std::abs(t.real())))
    throw NumericalError("trace of a self-adjoint polynomial has a large imaginary part");
  return t;
}

CMatrix tensor_sharp(const TensorPolynomial& t, WordEvaluator& eval, const CMatrix& c) {
  require(c.rows() == eval.dim() && c.cols() == eval.dim(), "tensor_sharp: dimension mismatch");
  CMatrix acc = CMatrix::Zero(eval.dim(), eval.dim());
  for (const auto& [k, coef] : t.terms()) acc += coef * (eval.word(k.first) * c * eval.word(k.second));
  return acc;
}

CMatrix tensor_sharp(const TensorPolynomial& t, const MatrixTuple& x, const CMatrix& c) {
  WordEvaluator ev(x);
  return tensor_sharp(t, ev, c);
}

Complex tensor_trace(const TensorPolynomial& t, WordEvaluator& eval) {
  Complex acc = 0.0;
  for (const auto& [k, coef] : t.terms()) acc += coef * trace_n(eval.word(k.first)) * trace_n(eval.word(k.second));
  return acc;
}

Complex tensor_trace(const TensorPolynomial& t, const MatrixTuple& x) {
  WordEvaluator ev(x);
  return tensor_trace(t, ev);
}

}  // namespace freelab
