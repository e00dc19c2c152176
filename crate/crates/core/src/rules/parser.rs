use super::ast::{BinOp, Expr, Func, Matcher, Quantifier, RuleAst, Template, TemplatePart, RESERVED};
use super::lexer::{lex, Spanned, Tok};
use super::RuleError;

const MAX_DEPTH: usize = 64;

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    depth: usize,
    /// Position reported for every error, used for template placeholders.
    pin: Option<(usize, usize)>,
}

impl Parser {
    fn new(toks: Vec<Spanned>) -> Self {
        Parser { toks, pos: 0, depth: 0, pin: None }
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos.min(self.toks.len() - 1)].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn bump(&mut self) -> Tok {
        let t = self.peek().clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &str) -> RuleError {
        let here = &self.toks[self.pos.min(self.toks.len() - 1)];
        let (line, col) = self.pin.unwrap_or((here.line, here.col));
        RuleError::Parse { line, col, expected: expected.to_string(), found: here.tok.describe() }
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), RuleError> {
        if self.is_kw(kw) {
            self.bump();
            Ok(())
        } else {
            Err(self.error(&format!("`{kw}`")))
        }
    }

    fn expect(&mut self, tok: Tok) -> Result<(), RuleError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            Err(self.error(&format!("`{}`", tok.symbol())))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, RuleError> {
        match self.peek() {
            Tok::Ident(s) if !RESERVED.contains(&s.as_str()) => {
                let s = s.clone();
                self.bump();
                Ok(s)
            }
            _ => Err(self.error(what)),
        }
    }

    fn enter(&mut self) -> Result<(), RuleError> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(self.error("shallower nesting"));
        }
        Ok(())
    }

    fn rule(&mut self) -> Result<RuleAst, RuleError> {
        self.expect_kw("when")?;
        let matcher = if *self.peek() == Tok::Star {
            self.bump();
            Matcher(None)
        } else {
            let mut kinds = vec![self.ident("action kind or `*`")?];
            while *self.peek() == Tok::Pipe {
                self.bump();
                kinds.push(self.ident("action kind")?);
            }
            Matcher(Some(kinds))
        };
        self.expect(Tok::Colon)?;
        self.expect_kw("if")?;
        let condition = self.expr()?;
        self.expect_kw("then")?;
        self.expect_kw("block")?;
        let block = self.template()?;
        self.expect_kw("suggest")?;
        let suggest = self.template()?;
        if *self.peek() != Tok::Eof {
            return Err(self.error("end of rule"));
        }
        Ok(RuleAst { matcher, condition, block, suggest })
    }

    fn template(&mut self) -> Result<Template, RuleError> {
        let at = &self.toks[self.pos.min(self.toks.len() - 1)];
        let pin = (at.line, at.col);
        match self.peek().clone() {
            Tok::Str(s) => {
                self.bump();
                parse_template(&s, pin)
            }
            _ => Err(self.error("string literal")),
        }
    }

    fn expr(&mut self) -> Result<Expr, RuleError> {
        self.enter()?;
        let mut lhs = self.and()?;
        while self.is_kw("or") {
            self.bump();
            lhs = Expr::Bin(BinOp::Or, Box::new(lhs), Box::new(self.and()?));
        }
        self.depth -= 1;
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Expr, RuleError> {
        let mut lhs = self.not()?;
        while self.is_kw("and") {
            self.bump();
            lhs = Expr::Bin(BinOp::And, Box::new(lhs), Box::new(self.not()?));
        }
        Ok(lhs)
    }

    fn not(&mut self) -> Result<Expr, RuleError> {
        if self.is_kw("not") {
            self.bump();
            self.enter()?;
            let e = Expr::Not(Box::new(self.not()?));
            self.depth -= 1;
            return Ok(e);
        }
        self.cmp()
    }

    fn cmp_op(&self) -> Option<BinOp> {
        Some(match self.peek() {
            Tok::Eq => BinOp::Eq,
            Tok::Ne => BinOp::Ne,
            Tok::Lt => BinOp::Lt,
            Tok::Le => BinOp::Le,
            Tok::Gt => BinOp::Gt,
            Tok::Ge => BinOp::Ge,
            _ => return None,
        })
    }

    fn cmp(&mut self) -> Result<Expr, RuleError> {
        let lhs = self.add()?;
        let Some(op) = self.cmp_op() else { return Ok(lhs) };
        self.bump();
        let rhs = self.add()?;
        if self.cmp_op().is_some() {
            return Err(self.error("`and`/`or` between comparisons"));
        }
        Ok(Expr::Bin(op, Box::new(lhs), Box::new(rhs)))
    }

    fn add(&mut self) -> Result<Expr, RuleError> {
        let mut lhs = self.mul()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.mul()?));
        }
    }

    fn mul(&mut self) -> Result<Expr, RuleError> {
        let mut lhs = self.unary()?;
        while *self.peek() == Tok::Star {
            self.bump();
            lhs = Expr::Bin(BinOp::Mul, Box::new(lhs), Box::new(self.unary()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, RuleError> {
        if *self.peek() == Tok::Minus {
            self.bump();
            self.enter()?;
            let e = Expr::Neg(Box::new(self.unary()?));
            self.depth -= 1;
            return Ok(e);
        }
        self.postfix()
    }

    fn postfix(&mut self) -> Result<Expr, RuleError> {
        let mut e = self.primary()?;
        loop {
            match self.peek() {
                Tok::Dot => {
                    self.bump();
                    let Tok::Ident(name) = self.peek().clone() else {
                        return Err(self.error("field name"));
                    };
                    self.bump();
                    e = Expr::Field(Box::new(e), name);
                }
                Tok::LBracket => {
                    self.bump();
                    let idx = self.expr()?;
                    self.expect(Tok::RBracket)?;
                    e = Expr::Index(Box::new(e), Box::new(idx));
                }
                _ => return Ok(e),
            }
        }
    }

    fn primary(&mut self) -> Result<Expr, RuleError> {
        match self.peek().clone() {
            Tok::Num(n) => {
                self.bump();
                Ok(Expr::Num(n))
            }
            Tok::Str(s) => {
                self.bump();
                Ok(Expr::Str(s))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Tok::Ident(id) => match id.as_str() {
                "true" | "false" => {
                    self.bump();
                    Ok(Expr::Bool(id == "true"))
                }
                "null" => {
                    self.bump();
                    Ok(Expr::Null)
                }
                "any" | "all" => {
                    self.bump();
                    let q = if id == "any" { Quantifier::Any } else { Quantifier::All };
                    let var = self.ident("quantifier variable")?;
                    self.expect_kw("in")?;
                    self.enter()?;
                    let list = self.add()?;
                    self.expect(Tok::Colon)?;
                    let body = self.expr()?;
                    self.depth -= 1;
                    Ok(Expr::Quant(q, var, Box::new(list), Box::new(body)))
                }
                _ if *self.peek_at(1) == Tok::LParen => {
                    let Some(func) = Func::from_name(&id) else {
                        return Err(self.error("known function"));
                    };
                    self.bump();
                    self.bump();
                    let mut args = Vec::new();
                    if *self.peek() != Tok::RParen {
                        args.push(self.expr()?);
                        while *self.peek() == Tok::Comma {
                            self.bump();
                            args.push(self.expr()?);
                        }
                    }
                    if args.len() != func.arity() {
                        return Err(self.error(&format!("{} argument(s) to {}", func.arity(), func.name())));
                    }
                    self.expect(Tok::RParen)?;
                    Ok(Expr::Call(func, args))
                }
                _ => Ok(Expr::Var(self.ident("expression")?)),
            },
            _ => Err(self.error("expression")),
        }
    }
}

fn parse_template(s: &str, pin: (usize, usize)) -> Result<Template, RuleError> {
    let err =
        |expected: &str, found: String| RuleError::Parse { line: pin.0, col: pin.1, expected: expected.into(), found };
    let chars: Vec<char> = s.chars().collect();
    let mut parts = Vec::new();
    let mut text = String::new();
    let mut i = 0;
    while i < chars.len() {
        match (chars[i], chars.get(i + 1)) {
            ('{', Some('{')) | ('}', Some('}')) => {
                text.push(chars[i]);
                i += 2;
            }
            ('}', _) => return Err(err("`}}` for a literal brace", "`}`".into())),
            ('{', _) => {
                let start = i + 1;
                let mut j = start;
                let mut in_str = false;
                while j < chars.len() {
                    match chars[j] {
                        '\\' if in_str => j += 1,
                        '"' => in_str = !in_str,
                        '}' if !in_str => break,
                        _ => {}
                    }
                    j += 1;
                }
                if j >= chars.len() {
                    return Err(err("`}` closing placeholder", "end of template".into()));
                }
                let src: String = chars[start..j].iter().collect();
                parts.push(TemplatePart::Text(std::mem::take(&mut text)));
                parts.push(TemplatePart::Expr(parse_expr_pinned(&src, Some(pin))?));
                i = j + 1;
            }
            (c, _) => {
                text.push(c);
                i += 1;
            }
        }
    }
    parts.push(TemplatePart::Text(text));
    Ok(Template::new(parts))
}

fn parse_expr_pinned(src: &str, pin: Option<(usize, usize)>) -> Result<Expr, RuleError> {
    let toks = lex(src).map_err(|e| match (e, pin) {
        (RuleError::Parse { expected, found, .. }, Some((line, col))) => {
            RuleError::Parse { line, col, expected, found }
        }
        (e, _) => e,
    })?;
    let mut p = Parser::new(toks);
    p.pin = pin;
    let e = p.expr()?;
    if *p.peek() != Tok::Eof {
        return Err(p.error("end of expression"));
    }
    Ok(e)
}

#[cfg(test)]
pub(crate) fn parse_expr(src: &str) -> Result<Expr, RuleError> {
    parse_expr_pinned(src, None)
}

pub(crate) fn parse_rule_ast(src: &str) -> Result<RuleAst, RuleError> {
    Parser::new(lex(src)?).rule()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence() {
        let e = parse_expr("a or b and not c = 1 + 2 * 3").unwrap();
        assert_eq!(e.to_string(), "a or b and not c = 1 + 2 * 3");
        match e {
            Expr::Bin(BinOp::Or, _, r) => assert!(matches!(*r, Expr::Bin(BinOp::And, ..))),
            _ => panic!("or at top"),
        }
    }

    #[test]
    fn parens_are_kept_only_where_needed() {
        let e = parse_expr("(a or b) and (c)").unwrap();
        assert_eq!(e.to_string(), "(a or b) and c");
        let e = parse_expr("(any x in l: x.a > 1) and y").unwrap();
        assert_eq!(e.to_string(), "(any x in l: x.a > 1) and y");
    }

    #[test]
    fn chained_comparison_is_rejected() {
        assert!(parse_expr("a < b < c").is_err());
    }

    #[test]
    fn error_location() {
        let err = parse_rule_ast("when craft: if\n  action.count >\nthen block \"x\" suggest \"y\"").unwrap_err();
        assert_eq!(err, RuleError::Parse { line: 3, col: 1, expected: "expression".into(), found: "`then`".into() });
    }

    #[test]
    fn templates() {
        let r = parse_rule_ast(r#"when *: if true then block "need {a.b} {{x}}" suggest "ok""#).unwrap();
        assert_eq!(r.block.parts.len(), 3);
        assert_eq!(r.to_string(), r#"when *: if true then block "need {a.b} {{x}}" suggest "ok""#);
        assert!(parse_rule_ast(r#"when *: if true then block "{a." suggest """#).is_err());
        assert!(parse_rule_ast(r#"when *: if true then block "a}" suggest """#).is_err());
    }

    #[test]
    fn arity_is_checked() {
        assert!(parse_expr("len(a, b)").is_err());
        assert!(parse_expr("nope(a)").is_err());
    }

    #[test]
    fn deep_nesting_is_an_error_not_a_crash() {
        let src = format!("{}1{}", "(".repeat(500), ")".repeat(500));
        assert!(parse_expr(&src).is_err());
        let src = format!("{}x", "not ".repeat(500));
        assert!(parse_expr(&src).is_err());
    }
}
