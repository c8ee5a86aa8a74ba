#include <cctype>
#include <charconv>
#include <string>

#include "flatforge/symexpr.hpp"

namespace flatforge {

namespace {

enum class Tok { Num, Ident, Plus, Minus, Star, Slash, Caret, LParen, RParen, Comma, End };

struct Token {
    Tok kind = Tok::End;
    std::size_t offset = 0;
    Rational value;     // Num
    std::string text;   // Ident
};

[[noreturn]] void fail(std::size_t offset, const std::string& msg) {
    throw ParseError(offset, msg + " at offset " + std::to_string(offset));
}

class Lexer {
public:
    explicit Lexer(std::string_view s) : s_(s) { advance(); }

    const Token& peek() const { return cur_; }

    Token take() {
        Token t = cur_;
        advance();
        return t;
    }

private:
    void advance() {
        while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
        cur_ = Token{};
        cur_.offset = pos_;
        if (pos_ >= s_.size()) {
            cur_.kind = Tok::End;
            return;
        }
        char c = s_[pos_];
        switch (c) {
            case '+': cur_.kind = Tok::Plus; ++pos_; return;
            case '-': cur_.kind = Tok::Minus; ++pos_; return;
            case '*': cur_.kind = Tok::Star; ++pos_; return;
            case '/': cur_.kind = Tok::Slash; ++pos_; return;
            case '^': cur_.kind = Tok::Caret; ++pos_; return;
            case '(': cur_.kind = Tok::LParen; ++pos_; return;
            case ')': cur_.kind = Tok::RParen; ++pos_; return;
            case ',': cur_.kind = Tok::Comma; ++pos_; return;
            default: break;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
            lex_number();
            return;
        }
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            std::size_t start = pos_;
            while (pos_ < s_.size() &&
                   (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_')) {
                ++pos_;
            }
            cur_.kind = Tok::Ident;
            cur_.text = std::string(s_.substr(start, pos_ - start));
            return;
        }
        fail(pos_, std::string("unexpected character '") + c + "'");
    }

    void lex_number() {
        std::size_t start = pos_;
        long long mantissa = 0;
        long long frac_digits = 0;
        bool any = false;
        auto push_digit = [&](char d) {
            if (mantissa > (std::numeric_limits<long long>::max() - 9) / 10) {
                fail(start, "numeric literal too large");
            }
            mantissa = mantissa * 10 + (d - '0');
            any = true;
        };
        while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) {
            push_digit(s_[pos_++]);
        }
        if (pos_ < s_.size() && s_[pos_] == '.') {
            ++pos_;
            while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) {
                push_digit(s_[pos_++]);
                ++frac_digits;
            }
        }
        if (!any) fail(start, "malformed numeric literal");
        long long exp10 = 0;
        if (pos_ < s_.size() && (s_[pos_] == 'e' || s_[pos_] == 'E')) {
            std::size_t mark = pos_;
            ++pos_;
            bool neg = false;
            if (pos_ < s_.size() && (s_[pos_] == '+' || s_[pos_] == '-')) {
                neg = s_[pos_] == '-';
                ++pos_;
            }
            if (pos_ >= s_.size() || !std::isdigit(static_cast<unsigned char>(s_[pos_]))) {
                // Not an exponent after all (e.g. "2*epsilon" tokenizes as 2 then ident).
                pos_ = mark;
            } else {
                long long e = 0;
                while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) {
                    e = e * 10 + (s_[pos_] - '0');
                    if (e > 18) fail(start, "exponent out of range");
                    ++pos_;
                }
                exp10 = neg ? -e : e;
            }
        }
        exp10 -= frac_digits;
        Rational r(mantissa);
        if (exp10 > 0) r *= Rational(10).pow_int(exp10);
        if (exp10 < 0) r /= Rational(10).pow_int(-exp10);
        cur_.kind = Tok::Num;
        cur_.value = r;
    }

    std::string_view s_;
    std::size_t pos_ = 0;
    Token cur_;
};

bool is_function_name(const std::string& s) {
    return s == "sin" || s == "cos" || s == "tan" || s == "sqrt" || s == "exp" || s == "ln" ||
           s == "atan" || s == "atan2";
}

// Classifies an identifier as a variable of one of the jet families or a
// parameter.  Family prefixes followed by a digit must form well-shaped
// variable names; `y` is accepted as an alias of `yd` so parameterizations
// can be written in flat-output jets directly.
VarId classify_ident(const std::string& s, std::size_t offset) {
    struct Family {
        const char* prefix;
        VarKind kind;
        bool channel;  // index restricted to {1,2}
    };
    static const Family families[] = {
        {"ubar", VarKind::BarInputJet, true}, {"yd", VarKind::RefJet, true},
        {"x", VarKind::State, false},         {"u", VarKind::InputJet, true},
        {"v", VarKind::NewInputJet, true},    {"y", VarKind::RefJet, true},
    };
    for (const auto& fam : families) {
        std::string_view pre(fam.prefix);
        if (s.size() <= pre.size() || s.compare(0, pre.size(), pre) != 0) continue;
        if (!std::isdigit(static_cast<unsigned char>(s[pre.size()]))) continue;
        std::size_t i = pre.size();
        long long index = 0;
        while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) {
            index = index * 10 + (s[i] - '0');
            if (index > 1000000) fail(offset, "variable index out of range in '" + s + "'");
            ++i;
        }
        long long order = 0;
        bool has_order = false;
        if (i < s.size()) {
            if (s[i] != '_') fail(offset, "malformed variable name '" + s + "'");
            ++i;
            if (i >= s.size() || !std::isdigit(static_cast<unsigned char>(s[i]))) {
                fail(offset, "malformed variable name '" + s + "'");
            }
            while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) {
                order = order * 10 + (s[i] - '0');
                if (order > 1000000) fail(offset, "jet order out of range in '" + s + "'");
                ++i;
            }
            has_order = true;
        }
        if (i != s.size()) fail(offset, "malformed variable name '" + s + "'");
        if (index < 1) fail(offset, "variable index must be positive in '" + s + "'");
        if (fam.channel && index > 2) {
            fail(offset, "input/output channel must be 1 or 2 in '" + s + "'");
        }
        if (fam.kind == VarKind::State && has_order) {
            fail(offset, "state variables carry no jet order: '" + s + "'");
        }
        return VarId{fam.kind, static_cast<int>(index), static_cast<int>(order), {}};
    }
    // Parameter names: [a-z][a-z0-9_]*
    if (!std::islower(static_cast<unsigned char>(s[0]))) {
        fail(offset, "malformed variable name '" + s + "'");
    }
    for (char c : s) {
        if (!std::islower(static_cast<unsigned char>(c)) &&
            !std::isdigit(static_cast<unsigned char>(c)) && c != '_') {
            fail(offset, "malformed parameter name '" + s + "'");
        }
    }
    return VarId::parameter(s);
}

class Parser {
public:
    explicit Parser(std::string_view s) : lx_(s) {}

    Expr parse() {
        Expr e = expression();
        if (lx_.peek().kind != Tok::End) fail(lx_.peek().offset, "unexpected trailing input");
        return e;
    }

private:
    Expr expression() {
        Expr e = term();
        while (lx_.peek().kind == Tok::Plus || lx_.peek().kind == Tok::Minus) {
            Tok op = lx_.take().kind;
            Expr rhs = term();
            e = (op == Tok::Plus) ? e + rhs : e - rhs;
        }
        return e;
    }

    Expr term() {
        Expr e = unary();
        while (lx_.peek().kind == Tok::Star || lx_.peek().kind == Tok::Slash) {
            Tok op = lx_.take().kind;
            Expr rhs = unary();
            e = (op == Tok::Star) ? e * rhs : e / rhs;
        }
        return e;
    }

    Expr unary() {
        if (lx_.peek().kind == Tok::Minus) {
            lx_.take();
            return -unary();
        }
        return power();
    }

    Expr power() {
        Expr e = atom();
        while (lx_.peek().kind == Tok::Caret) {
            std::size_t off = lx_.take().offset;
            Expr rhs = exponent_operand();
            if (!rhs.is_constant()) {
                fail(off, "exponent must be a rational constant");
            }
            e = pow(e, rhs.constant_value());
        }
        return e;
    }

    // The exponent binds tighter than unary minus but still allows a leading
    // sign and parenthesized fractions: x^-2, x^(1/2).
    Expr exponent_operand() {
        if (lx_.peek().kind == Tok::Minus) {
            lx_.take();
            return -exponent_operand();
        }
        return atom();
    }

    Expr atom() {
        Token t = lx_.take();
        switch (t.kind) {
            case Tok::Num: return constant(t.value);
            case Tok::LParen: {
                Expr e = expression();
                expect(Tok::RParen, ")");
                return e;
            }
            case Tok::Ident: {
                if (is_function_name(t.text)) {
                    if (lx_.peek().kind != Tok::LParen) {
                        fail(t.offset, "expected '(' after function name '" + t.text + "'");
                    }
                    lx_.take();
                    std::vector<Expr> args;
                    args.push_back(expression());
                    while (lx_.peek().kind == Tok::Comma) {
                        lx_.take();
                        args.push_back(expression());
                    }
                    expect(Tok::RParen, ")");
                    return apply_function(t.text, std::move(args), t.offset);
                }
                return var(classify_ident(t.text, t.offset));
            }
            default:
                fail(t.offset, "expected a value");
        }
    }

    Expr apply_function(const std::string& name, std::vector<Expr> args, std::size_t offset) {
        std::size_t want = (name == "atan2") ? 2 : 1;
        if (args.size() != want) {
            fail(offset, "function '" + name + "' expects " + std::to_string(want) +
                             " argument(s), got " + std::to_string(args.size()));
        }
        if (name == "sin") return sin(args[0]);
        if (name == "cos") return cos(args[0]);
        if (name == "tan") return tan(args[0]);
        if (name == "sqrt") return sqrt(args[0]);
        if (name == "exp") return exp(args[0]);
        if (name == "ln") return ln(args[0]);
        if (name == "atan") return atan(args[0]);
        if (name == "atan2") return atan2(args[0], args[1]);
        fail(offset, "unknown function '" + name + "'");
    }

    void expect(Tok kind, const char* what) {
        if (lx_.peek().kind != kind) {
            fail(lx_.peek().offset, std::string("expected '") + what + "'");
        }
        lx_.take();
    }

    Lexer lx_;
};

}  // namespace

Expr parse_expr(std::string_view text) {
    Parser p(text);
    return p.parse();
}

}  // namespace flatforge
