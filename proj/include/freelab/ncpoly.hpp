#pragma once

// Non-commutative polynomials over d letters with complex coefficients,
// matrix evaluation, free difference quotients and cyclic derivatives.

#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "freelab/matrixcore.hpp"

namespace freelab {

/// Letters are 0-based internally; the textual form uses x1..xd.
using Word = std::vector<int>;

/// Graded lexicographic order: shorter words first, then lexicographic.
struct GradedLexLess {
  bool operator()(const Word& a, const Word& b) const {
    if (a.size() != b.size()) return a.size() < b.size();
    return a < b;
  }
};

/// Coefficients below this magnitude are dropped after arithmetic.
inline constexpr double kPruneTol = 1e-15;

/// All words of length 0..max_degree over d letters, graded-lex order.
std::vector<Word> enumerate_words(int d, int max_degree);
Word reversed(const Word& w);
std::string word_to_string(const Word& w);

class NCPolynomial {
 public:
  using TermMap = std::map<Word, Complex, GradedLexLess>;

  NCPolynomial() = default;
  explicit NCPolynomial(int d) : d_(d) {}

  static NCPolynomial constant(int d, Complex c);
  static NCPolynomial letter(int d, int j);  // 0-based
  static NCPolynomial monomial(int d, Word w, Complex c = 1.0);

  /// Parses text like "2.0*x1*x2*x1 - 0.5*x2 + 0.25i*x1^2". With several
  /// prefixes (e.g. {"x", "a"}) letter k of prefix block b maps to b*d + k-1
  /// and the polynomial has d * prefixes.size() letters.
  static NCPolynomial parse(const std::string& text, int d,
                            const std::vector<std::string>& prefixes = {"x"});

  int d() const { return d_; }
  const TermMap& terms() const { return terms_; }
  bool is_zero() const { return terms_.empty(); }
  int degree() const;
  Complex coefficient(const Word& w) const;

  void add_term(const Word& w, Complex c);

  NCPolynomial operator+(const NCPolynomial& o) const;
  NCPolynomial operator-(const NCPolynomial& o) const;
  NCPolynomial operator*(const NCPolynomial& o) const;
  NCPolynomial operator*(Complex s) const;
  bool operator==(const NCPolynomial& o) const;

  std::string to_string(const std::vector<std::string>& prefixes = {"x"}) const;

 private:
  void prune();
  int d_ = 0;
  TermMap terms_;
};

/// Word reversal with conjugated coefficients.
NCPolynomial star(const NCPolynomial& p);
bool is_selfadjoint(const NCPolynomial& p, double tol = 1e-12);

/// Element of NCP_d (x) NCP_d.
class TensorPolynomial {
 public:
  using Key = std::pair<Word, Word>;
  struct KeyLess {
    bool operator()(const Key& a, const Key& b) const {
      GradedLexLess less;
      if (less(a.first, b.first)) return true;
      if (less(b.first, a.first)) return false;
      return less(a.second, b.second);
    }
  };
  using TermMap = std::map<Key, Complex, KeyLess>;

  TensorPolynomial() = default;
  explicit TensorPolynomial(int d) : d_(d) {}

  int d() const { return d_; }
  const TermMap& terms() const { return terms_; }
  bool is_zero() const { return terms_.empty(); }
  void add_term(const Word& left, const Word& right, Complex c);
  TensorPolynomial operator+(const TensorPolynomial& o) const;
  TensorPolynomial operator*(Complex s) const;
  bool operator==(const TensorPolynomial& o) const;

 private:
  int d_ = 0;
  TermMap terms_;
};

/// Splits each word at every occurrence of letter j: prefix (x) suffix.
TensorPolynomial free_difference_quotient(const NCPolynomial& p, int j);
/// Sums the cyclic rotations that follow each occurrence of letter j.
NCPolynomial cyclic_derivative(const NCPolynomial& p, int j);

/// Evaluates words on a fixed tuple of matrices, caching every prefix.
class WordEvaluator {
 public:
  explicit WordEvaluator(std::span<const CMatrix> letters);
  explicit WordEvaluator(const MatrixTuple& x);

  int letter_count() const { return static_cast<int>(letters_.size()); }
  int dim() const { return n_; }
  const CMatrix& word(const Word& w);
  CMatrix polynomial(const NCPolynomial& p);
  Complex trace(const NCPolynomial& p);

 private:
  std::vector<CMatrix> letters_;
  int n_ = 0;
  std::map<Word, CMatrix, GradedLexLess> cache_;
};

CMatrix evaluate(const NCPolynomial& p, const MatrixTuple& x);
/// tr_n p(X); throws if p is self-adjoint yet the trace has an imaginary
/// part above 1e-10.
Complex evaluate_trace(const NCPolynomial& p, const MatrixTuple& x);

/// sum coef * A(w1) C A(w2)
CMatrix tensor_sharp(const TensorPolynomial& t, const MatrixTuple& x, const CMatrix& c);
CMatrix tensor_sharp(const TensorPolynomial& t, WordEvaluator& eval, const CMatrix& c);
/// sum coef * tr_n A(w1) * tr_n A(w2)
Complex tensor_trace(const TensorPolynomial& t, const MatrixTuple& x);
Complex tensor_trace(const TensorPolynomial& t, WordEvaluator& eval);

// Shared term tokenizer for the textual polynomial formats.
struct ParsedFactor {
  std::string prefix;
  int index = 0;
};
struct ParsedTerm {
  Complex coefficient{1.0, 0.0};
  std::vector<ParsedFactor> factors;  // powers expanded in order
};
std::vector<ParsedTerm> parse_terms(const std::string& text);

}  // namespace freelab
