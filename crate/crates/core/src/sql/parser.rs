use super::ast::*;
use super::lexer::{tokenize, Token, TokenKind};
use super::SqlError;
use crate::storage::{DataType, Value};

/// Reserved words that may still be used as plain identifiers.
const SOFT_KEYWORDS: &[&str] = &["value", "class", "key"];

/// Parses a `;`-separated script. The final `;` is optional.
pub fn parse(sql: &str) -> Result<Vec<Statement>, SqlError> {
    let mut p = Parser::new(sql)?;
    let mut out = Vec::new();
    loop {
        while p.eat_symbol(";") {}
        if p.at_eof() {
            break;
        }
        out.push(p.statement()?);
        if !p.at_eof() {
            p.expect_symbol(";")?;
        }
    }
    Ok(out)
}

/// Parses exactly one statement.
pub fn parse_statement(sql: &str) -> Result<Statement, SqlError> {
    let mut p = Parser::new(sql)?;
    let s = p.statement()?;
    p.eat_symbol(";");
    if !p.at_eof() {
        return Err(p.error_here("expected end of statement"));
    }
    Ok(s)
}

/// Splits a script into statement texts with their starting offsets, so a
/// runner can execute statements one at a time and report errors in place.
pub fn split_statements(sql: &str) -> Result<Vec<(usize, String)>, SqlError> {
    let toks = tokenize(sql)?;
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for t in &toks {
        match &t.kind {
            TokenKind::Symbol(";") | TokenKind::Eof => {
                if let Some(s) = start.take() {
                    out.push((s, sql[s..t.offset].to_string()));
                }
            }
            _ => {
                start.get_or_insert(t.offset);
            }
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn new(sql: &str) -> Result<Self, SqlError> {
        Ok(Self { toks: tokenize(sql)?, pos: 0 })
    }

    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn peek_at(&self, k: usize) -> &Token {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)]
    }

    fn advance(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn at_eof(&self) -> bool {
        self.peek().kind == TokenKind::Eof
    }

    fn error_here(&self, msg: &str) -> SqlError {
        let t = self.peek();
        SqlError::syntax(format!("{msg}, found {}", t.describe()), t.line, t.col, t.offset)
    }

    fn is_word(&self, w: &str) -> bool {
        matches!(&self.peek().kind, TokenKind::Word(x) if x == w)
    }

    fn eat_word(&mut self, w: &str) -> bool {
        if self.is_word(w) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn expect_word(&mut self, w: &str) -> Result<(), SqlError> {
        if self.eat_word(w) {
            Ok(())
        } else {
            Err(self.error_here(&format!("expected {}", w.to_uppercase())))
        }
    }

    fn is_symbol(&self, s: &str) -> bool {
        matches!(&self.peek().kind, TokenKind::Symbol(x) if *x == s)
    }

    fn eat_symbol(&mut self, s: &str) -> bool {
        if self.is_symbol(s) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn expect_symbol(&mut self, s: &str) -> Result<(), SqlError> {
        if self.eat_symbol(s) {
            Ok(())
        } else {
            Err(self.error_here(&format!("expected '{s}'")))
        }
    }

    fn ident(&mut self) -> Result<String, SqlError> {
        match &self.peek().kind {
            TokenKind::Word(w) if !is_reserved(w) || SOFT_KEYWORDS.contains(&w.as_str()) => {
                let w = w.clone();
                self.advance();
                Ok(w)
            }
            TokenKind::QuotedIdent(s) => {
                let s = s.clone();
                self.advance();
                Ok(s)
            }
            _ => Err(self.error_here("expected identifier")),
        }
    }

    fn ident_list(&mut self) -> Result<Vec<String>, SqlError> {
        let mut v = vec![self.ident()?];
        while self.eat_symbol(",") {
            v.push(self.ident()?);
        }
        Ok(v)
    }

    fn statement(&mut self) -> Result<Statement, SqlError> {
        match &self.peek().kind {
            TokenKind::Word(w) => match w.as_str() {
                "select" => self.select().map(Statement::Select),
                "insert" => self.insert(),
                "update" => self.update(),
                "delete" => self.delete(),
                "create" => self.create_table(),
                "predict" => self.predict().map(Statement::Predict),
                _ => Err(self.error_here("expected a statement")),
            },
            _ => Err(self.error_here("expected a statement")),
        }
    }

    fn create_table(&mut self) -> Result<Statement, SqlError> {
        self.expect_word("create")?;
        self.expect_word("table")?;
        let name = self.ident()?;
        self.expect_symbol("(")?;
        let mut columns = Vec::new();
        loop {
            let cname = self.ident()?;
            let ty = self.data_type()?;
            let mut col = ColumnDef { name: cname, ty, unique: false, nullable: true };
            loop {
                if self.eat_word("unique") {
                    col.unique = true;
                } else if self.eat_word("not") {
                    self.expect_word("null")?;
                    col.nullable = false;
                } else if self.eat_word("primary") {
                    self.expect_word("key")?;
                    col.unique = true;
                    col.nullable = false;
                } else {
                    break;
                }
            }
            columns.push(col);
            if !self.eat_symbol(",") {
                break;
            }
        }
        self.expect_symbol(")")?;
        Ok(Statement::CreateTable { name, columns })
    }

    fn data_type(&mut self) -> Result<DataType, SqlError> {
        let ty = match &self.peek().kind {
            TokenKind::Word(w) => match w.as_str() {
                "int" | "integer" | "bigint" | "int64" | "int8" => DataType::Int64,
                "float" | "double" | "real" | "float64" | "float8" => DataType::Float64,
                "text" | "varchar" | "string" => DataType::Text,
                "bool" | "boolean" => DataType::Bool,
                _ => return Err(self.error_here("expected a column type")),
            },
            _ => return Err(self.error_here("expected a column type")),
        };
        self.advance();
        // VARCHAR(n) and friends: the length is accepted and ignored.
        if self.eat_symbol("(") {
            match self.peek().kind {
                TokenKind::Number(_) => {
                    self.advance();
                }
                _ => return Err(self.error_here("expected a length")),
            }
            self.expect_symbol(")")?;
        }
        Ok(ty)
    }

    fn insert(&mut self) -> Result<Statement, SqlError> {
        self.expect_word("insert")?;
        self.expect_word("into")?;
        let table = self.ident()?;
        let columns = if self.eat_symbol("(") {
            let c = self.ident_list()?;
            self.expect_symbol(")")?;
            Some(c)
        } else {
            None
        };
        self.expect_word("values")?;
        let mut rows = Vec::new();
        loop {
            self.expect_symbol("(")?;
            let mut row = vec![self.expr()?];
            while self.eat_symbol(",") {
                row.push(self.expr()?);
            }
            self.expect_symbol(")")?;
            rows.push(row);
            if !self.eat_symbol(",") {
                break;
            }
        }
        Ok(Statement::Insert { table, columns, rows })
    }

    fn table_ref(&mut self) -> Result<TableRef, SqlError> {
        let name = self.ident()?;
        let alias = if self.eat_word("as") {
            Some(self.ident()?)
        } else if matches!(&self.peek().kind, TokenKind::Word(w) if !is_reserved(w))
            || matches!(self.peek().kind, TokenKind::QuotedIdent(_))
        {
            Some(self.ident()?)
        } else {
            None
        };
        Ok(TableRef { name, alias })
    }

    fn select(&mut self) -> Result<Select, SqlError> {
        self.expect_word("select")?;
        let mut projection = Vec::new();
        loop {
            if self.eat_symbol("*") {
                projection.push(SelectItem::Wildcard);
            } else {
                let expr = self.expr()?;
                let alias = if self.eat_word("as") { Some(self.ident()?) } else { None };
                projection.push(SelectItem::Expr { expr, alias });
            }
            if !self.eat_symbol(",") {
                break;
            }
        }
        self.expect_word("from")?;
        let mut from = vec![self.table_ref()?];
        while self.eat_symbol(",") {
            from.push(self.table_ref()?);
        }
        let mut joins = Vec::new();
        loop {
            let inner = self.eat_word("inner");
            if !self.eat_word("join") {
                if inner {
                    return Err(self.error_here("expected JOIN"));
                }
                break;
            }
            let t = self.table_ref()?;
            self.expect_word("on")?;
            joins.push((t, self.expr()?));
        }
        let filter = if self.eat_word("where") { Some(self.expr()?) } else { None };
        let limit = if self.eat_word("limit") {
            match &self.peek().kind {
                TokenKind::Number(n) if n.chars().all(|c| c.is_ascii_digit()) => {
                    let v = n.parse::<u64>().map_err(|_| self.error_here("LIMIT out of range"))?;
                    self.advance();
                    Some(v)
                }
                _ => return Err(self.error_here("expected a row count")),
            }
        } else {
            None
        };
        Ok(Select { projection, from, joins, filter, limit })
    }

    fn update(&mut self) -> Result<Statement, SqlError> {
        self.expect_word("update")?;
        let table = self.ident()?;
        self.expect_word("set")?;
        let mut assignments = Vec::new();
        loop {
            let c = self.ident()?;
            self.expect_symbol("=")?;
            assignments.push((c, self.expr()?));
            if !self.eat_symbol(",") {
                break;
            }
        }
        let filter = if self.eat_word("where") { Some(self.expr()?) } else { None };
        Ok(Statement::Update { table, assignments, filter })
    }

    fn delete(&mut self) -> Result<Statement, SqlError> {
        self.expect_word("delete")?;
        self.expect_word("from")?;
        let table = self.ident()?;
        let filter = if self.eat_word("where") { Some(self.expr()?) } else { None };
        Ok(Statement::Delete { table, filter })
    }

    /// `PREDICT (VALUE|CLASS) OF <col> FROM <table> [WHERE <expr>]
    ///  TRAIN ON (<cols>|*) [WITH <expr>] [VALUES <tuples>]`
    fn predict(&mut self) -> Result<PredictStatement, SqlError> {
        self.expect_word("predict")?;
        let task = if self.eat_word("value") {
            TaskKind::Value
        } else if self.eat_word("class") {
            TaskKind::Class
        } else {
            return Err(self.error_here("expected VALUE or CLASS"));
        };
        self.expect_word("of")?;
        let target = self.ident()?;
        self.expect_word("from")?;
        let source_table = self.ident()?;
        let infer_predicate = if self.eat_word("where") { Some(self.expr()?) } else { None };
        self.expect_word("train")?;
        self.expect_word("on")?;
        let train_features =
            if self.eat_symbol("*") { FeatureList::All } else { FeatureList::Columns(self.ident_list()?) };
        let train_predicate = if self.eat_word("with") { Some(self.expr()?) } else { None };
        let inline_rows = if self.eat_word("values") {
            let mut rows = Vec::new();
            loop {
                self.expect_symbol("(")?;
                let mut row = vec![self.literal()?];
                while self.eat_symbol(",") {
                    row.push(self.literal()?);
                }
                self.expect_symbol(")")?;
                rows.push(row);
                if !self.eat_symbol(",") {
                    break;
                }
            }
            Some(rows)
        } else {
            None
        };
        Ok(PredictStatement {
            task,
            target,
            source_table,
            infer_predicate,
            train_features,
            train_predicate,
            inline_rows,
        })
    }

    fn literal(&mut self) -> Result<Value, SqlError> {
        match self.expr()? {
            Expr::Literal(v) => Ok(v),
            _ => Err(self.error_here("expected a literal value")),
        }
    }

    fn expr(&mut self) -> Result<Expr, SqlError> {
        self.or_expr()
    }

    fn or_expr(&mut self) -> Result<Expr, SqlError> {
        let mut e = self.and_expr()?;
        while self.eat_word("or") {
            e = Expr::binary(BinOp::Or, e, self.and_expr()?);
        }
        Ok(e)
    }

    fn and_expr(&mut self) -> Result<Expr, SqlError> {
        let mut e = self.not_expr()?;
        while self.eat_word("and") {
            e = Expr::binary(BinOp::And, e, self.not_expr()?);
        }
        Ok(e)
    }

    fn not_expr(&mut self) -> Result<Expr, SqlError> {
        if self.eat_word("not") {
            return Ok(Expr::Not(Box::new(self.not_expr()?)));
        }
        self.comparison()
    }

    fn comparison(&mut self) -> Result<Expr, SqlError> {
        let e = self.additive()?;
        let op = match &self.peek().kind {
            TokenKind::Symbol("=") => BinOp::Eq,
            TokenKind::Symbol("<>") | TokenKind::Symbol("!=") => BinOp::NotEq,
            TokenKind::Symbol("<") => BinOp::Lt,
            TokenKind::Symbol("<=") => BinOp::LtEq,
            TokenKind::Symbol(">") => BinOp::Gt,
            TokenKind::Symbol(">=") => BinOp::GtEq,
            TokenKind::Word(w) if w == "is" => {
                self.advance();
                let negated = self.eat_word("not");
                self.expect_word("null")?;
                return Ok(Expr::IsNull { expr: Box::new(e), negated });
            }
            _ => return Ok(e),
        };
        self.advance();
        Ok(Expr::binary(op, e, self.additive()?))
    }

    fn additive(&mut self) -> Result<Expr, SqlError> {
        let mut e = self.multiplicative()?;
        loop {
            let op = if self.eat_symbol("+") {
                BinOp::Add
            } else if self.eat_symbol("-") {
                BinOp::Sub
            } else {
                return Ok(e);
            };
            e = Expr::binary(op, e, self.multiplicative()?);
        }
    }

    fn multiplicative(&mut self) -> Result<Expr, SqlError> {
        let mut e = self.unary()?;
        loop {
            let op = if self.eat_symbol("*") {
                BinOp::Mul
            } else if self.eat_symbol("/") {
                BinOp::Div
            } else {
                return Ok(e);
            };
            e = Expr::binary(op, e, self.unary()?);
        }
    }

    fn unary(&mut self) -> Result<Expr, SqlError> {
        if self.is_symbol("-") {
            let minus = self.advance();
            if let TokenKind::Number(n) = &self.peek().kind {
                let text = format!("-{n}");
                let tok = self.advance();
                return number(&text, &tok);
            }
            let _ = minus;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, SqlError> {
        let tok = self.peek().clone();
        match &tok.kind {
            TokenKind::Number(n) => {
                self.advance();
                number(n, &tok)
            }
            TokenKind::Str(s) => {
                self.advance();
                Ok(Expr::Literal(Value::Text(s.clone())))
            }
            TokenKind::Symbol("(") => {
                self.advance();
                let e = self.expr()?;
                self.expect_symbol(")")?;
                Ok(e)
            }
            TokenKind::Word(w) if w == "null" => {
                self.advance();
                Ok(Expr::Literal(Value::Null))
            }
            TokenKind::Word(w) if w == "true" || w == "false" => {
                self.advance();
                Ok(Expr::Literal(Value::Bool(w == "true")))
            }
            TokenKind::Word(_) | TokenKind::QuotedIdent(_) => {
                let first = self.ident()?;
                if self.is_symbol(".") && matches!(self.peek_at(1).kind, TokenKind::Word(_) | TokenKind::QuotedIdent(_))
                {
                    self.advance();
                    let name = self.ident()?;
                    return Ok(Expr::Column(ColumnRef { table: Some(first), name }));
                }
                Ok(Expr::Column(ColumnRef { table: None, name: first }))
            }
            _ => Err(self.error_here("expected an expression")),
        }
    }
}

fn number(text: &str, tok: &Token) -> Result<Expr, SqlError> {
    let bad = || SqlError::syntax(format!("invalid number {text}"), tok.line, tok.col, tok.offset);
    if text.contains(['.', 'e']) {
        let v: f64 = text.parse().map_err(|_| bad())?;
        if !v.is_finite() {
            return Err(bad());
        }
        Ok(Expr::Literal(Value::Float(v)))
    } else {
        Ok(Expr::Literal(Value::Int(text.parse().map_err(|_| bad())?)))
    }
}
