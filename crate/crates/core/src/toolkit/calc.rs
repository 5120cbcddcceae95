//! Arithmetic expression evaluator backing the `calc` tool.
//!
//! Grammar (`^` binds tighter than unary minus, and is right-associative):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/' | '%') unary)*
//! unary  := ('+' | '-') unary | power
//! power  := atom ('^' unary)?
//! atom   := number | '(' expr ')'
//! ```

#[derive(Debug, Clone, Copy, PartialEq)]
enum Token {
    Num(f64),
    Plus,
    Minus,
    Star,
    Slash,
    Percent,
    Caret,
    LParen,
    RParen,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CalcError {
    /// Input contains something that is not arithmetic.
    Syntax(String),
    /// Well-formed but not computable (division by zero, overflow).
    Math(String),
}

impl std::fmt::Display for CalcError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CalcError::Syntax(m) | CalcError::Math(m) => f.write_str(m),
        }
    }
}

fn tokenize(input: &str) -> Result<Vec<Token>, CalcError> {
    let chars: Vec<char> = input.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let single = match c {
            '+' => Some(Token::Plus),
            '-' => Some(Token::Minus),
            '*' if chars.get(i + 1) == Some(&'*') => {
                i += 1;
                Some(Token::Caret)
            }
            '*' | '×' => Some(Token::Star),
            '/' | '÷' => Some(Token::Slash),
            '%' => Some(Token::Percent),
            '^' => Some(Token::Caret),
            '(' => Some(Token::LParen),
            ')' => Some(Token::RParen),
            _ => None,
        };
        if let Some(token) = single {
            tokens.push(token);
            i += 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            // optional exponent: e.g. 1e3, 2.5E-2
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let text: String = chars[start..i].iter().collect();
            let value = text
                .parse::<f64>()
                .map_err(|_| CalcError::Syntax(format!("malformed number `{text}`")))?;
            tokens.push(Token::Num(value));
            continue;
        }
        return Err(CalcError::Syntax(format!(
            "unexpected character `{c}` at position {i}"
        )));
    }
    Ok(tokens)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    depth: usize,
}

const MAX_DEPTH: usize = 256;

impl Parser {
    fn peek(&self) -> Option<Token> {
        self.tokens.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<Token> {
        let t = self.peek();
        self.pos += 1;
        t
    }

    fn enter(&mut self) -> Result<(), CalcError> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(CalcError::Syntax("expression nested too deeply".into()));
        }
        Ok(())
    }

    fn expr(&mut self) -> Result<f64, CalcError> {
        self.enter()?;
        let mut value = self.term()?;
        while let Some(op @ (Token::Plus | Token::Minus)) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            value = if op == Token::Plus { value + rhs } else { value - rhs };
        }
        self.depth -= 1;
        Ok(value)
    }

    fn term(&mut self) -> Result<f64, CalcError> {
        let mut value = self.unary()?;
        while let Some(op @ (Token::Star | Token::Slash | Token::Percent)) = self.peek() {
            self.pos += 1;
            let rhs = self.unary()?;
            value = match op {
                Token::Star => value * rhs,
                _ if rhs == 0.0 => return Err(CalcError::Math("division by zero".into())),
                Token::Slash => value / rhs,
                _ => value % rhs,
            };
        }
        Ok(value)
    }

    fn unary(&mut self) -> Result<f64, CalcError> {
        self.enter()?;
        let value = match self.peek() {
            Some(Token::Minus) => {
                self.pos += 1;
                -self.unary()?
            }
            Some(Token::Plus) => {
                self.pos += 1;
                self.unary()?
            }
            _ => self.power()?,
        };
        self.depth -= 1;
        Ok(value)
    }

    fn power(&mut self) -> Result<f64, CalcError> {
        let base = self.atom()?;
        if self.peek() == Some(Token::Caret) {
            self.pos += 1;
            let exponent = self.unary()?;
            return Ok(base.powf(exponent));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<f64, CalcError> {
        match self.bump() {
            Some(Token::Num(v)) => Ok(v),
            Some(Token::LParen) => {
                let v = self.expr()?;
                match self.bump() {
                    Some(Token::RParen) => Ok(v),
                    _ => Err(CalcError::Syntax("missing closing parenthesis".into())),
                }
            }
            Some(t) => Err(CalcError::Syntax(format!("unexpected token {t:?}"))),
            None => Err(CalcError::Syntax("unexpected end of expression".into())),
        }
    }
}

/// Evaluates an arithmetic expression over `+ - * / % ^` and parentheses.
pub fn evaluate(input: &str) -> Result<f64, CalcError> {
    let tokens = tokenize(input)?;
    if tokens.is_empty() {
        return Err(CalcError::Syntax("empty expression".into()));
    }
    let mut parser = Parser {
        tokens,
        pos: 0,
        depth: 0,
    };
    let value = parser.expr()?;
    if parser.pos != parser.tokens.len() {
        return Err(CalcError::Syntax(format!(
            "unexpected trailing token {:?}",
            parser.tokens[parser.pos]
        )));
    }
    if !value.is_finite() {
        return Err(CalcError::Math("result is not a finite number".into()));
    }
    Ok(value)
}

/// Integral values print without a fractional part.
pub fn format_number(value: f64) -> String {
    if value == value.trunc() && value.abs() < 1e15 {
        format!("{}", value as i64)
    } else {
        format!("{value}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn arithmetic() {
        let cases = [
            ("2*(3+4)", 14.0),
            ("2+2", 4.0),
            ("-3^2", -9.0),
            ("2^3^2", 512.0),
            ("2**3", 8.0),
            ("10 % 4", 2.0),
            ("7/2", 3.5),
            ("1e3 + .5", 1000.5),
            ("--1", 1.0),
        ];
        for (expr, expected) in cases {
            assert_eq!(evaluate(expr).unwrap(), expected, "{expr}");
        }
        assert_eq!(format_number(14.0), "14");
        assert_eq!(format_number(3.5), "3.5");
        assert_eq!(format_number(-0.0), "0");
    }

    #[test]
    fn rejects_non_arithmetic() {
        for bad in ["", "2+", "(1", "1)", "abs(1)", "x+1", "1;2", "__import__('os')", "1..2"] {
            assert!(matches!(evaluate(bad), Err(CalcError::Syntax(_))), "{bad}");
        }
        assert!(matches!(evaluate("1/0"), Err(CalcError::Math(_))));
        assert!(matches!(evaluate("5%0"), Err(CalcError::Math(_))));
        assert!(matches!(evaluate("10^400"), Err(CalcError::Math(_))));
        let deep = "(".repeat(10_000) + "1" + &")".repeat(10_000);
        assert!(evaluate(&deep).is_err());
    }

    proptest! {
        #[test]
        fn evaluation_is_pure_and_total(input in "[0-9+\\-*/%^(). a-z]{0,40}") {
            let first = evaluate(&input);
            prop_assert_eq!(first, evaluate(&input));
        }

        #[test]
        fn integer_sums_are_exact(a in -1_000_000i64..1_000_000, b in -1_000_000i64..1_000_000) {
            let expr = format!("{a} + ({b})");
            prop_assert_eq!(evaluate(&expr).unwrap(), (a + b) as f64);
        }
    }
}
