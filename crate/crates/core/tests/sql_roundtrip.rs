use neurdb_core::sql::{
    parse, parse_statement, BinOp, ColumnDef, ColumnRef, Expr, FeatureList, PredictStatement, Select, SelectItem,
    SqlError, Statement, TableRef, TaskKind,
};
use neurdb_core::storage::{DataType, Value};
use proptest::prelude::*;

fn ident() -> impl Strategy<Value = String> {
    prop_oneof![
        4 => "[a-z_][a-z0-9_]{0,6}",
        1 => Just("value".to_string()),
        1 => Just("Mixed Case".to_string()),
        1 => Just("with\"quote".to_string()),
        1 => Just("select".to_string()),
    ]
}

fn literal() -> impl Strategy<Value = Value> {
    prop_oneof![
        Just(Value::Null),
        any::<i64>().prop_map(Value::Int),
        (-1e12f64..1e12).prop_map(Value::Float),
        prop_oneof![Just(1e-9f64), Just(6.02e23), Just(-0.5)].prop_map(Value::Float),
        "[ -~]{0,8}".prop_map(Value::Text),
        any::<bool>().prop_map(Value::Bool),
    ]
}

fn column() -> impl Strategy<Value = ColumnRef> {
    (proptest::option::of(ident()), ident()).prop_map(|(table, name)| ColumnRef { table, name })
}

fn op() -> impl Strategy<Value = BinOp> {
    prop_oneof![
        Just(BinOp::Eq),
        Just(BinOp::NotEq),
        Just(BinOp::Lt),
        Just(BinOp::LtEq),
        Just(BinOp::Gt),
        Just(BinOp::GtEq),
        Just(BinOp::And),
        Just(BinOp::Or),
        Just(BinOp::Add),
        Just(BinOp::Sub),
        Just(BinOp::Mul),
        Just(BinOp::Div),
    ]
}

/// Expressions in canonical form: negation never wraps a literal, since
/// `-5` reads back as the literal itself.
fn expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![literal().prop_map(Expr::Literal), column().prop_map(Expr::Column)];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (op(), inner.clone(), inner.clone()).prop_map(|(o, l, r)| Expr::binary(o, l, r)),
            inner.clone().prop_map(|e| Expr::Not(Box::new(e))),
            inner
                .clone()
                .prop_filter("canonical negation", |e| !matches!(e, Expr::Literal(_)))
                .prop_map(|e| Expr::Neg(Box::new(e))),
            (inner, any::<bool>()).prop_map(|(e, negated)| Expr::IsNull { expr: Box::new(e), negated }),
        ]
    })
}

fn table_ref() -> impl Strategy<Value = TableRef> {
    (ident(), proptest::option::of(ident())).prop_map(|(name, alias)| TableRef { name, alias })
}

fn data_type() -> impl Strategy<Value = DataType> {
    prop_oneof![Just(DataType::Int64), Just(DataType::Float64), Just(DataType::Text), Just(DataType::Bool)]
}

fn select() -> impl Strategy<Value = Select> {
    (
        prop::collection::vec(
            prop_oneof![
                Just(SelectItem::Wildcard),
                (expr(), proptest::option::of(ident())).prop_map(|(expr, alias)| SelectItem::Expr { expr, alias })
            ],
            1..4,
        ),
        prop::collection::vec(table_ref(), 1..3),
        prop::collection::vec((table_ref(), expr()), 0..2),
        proptest::option::of(expr()),
        proptest::option::of(any::<u32>().prop_map(u64::from)),
    )
        .prop_map(|(projection, from, joins, filter, limit)| Select { projection, from, joins, filter, limit })
}

fn predict() -> impl Strategy<Value = PredictStatement> {
    (
        prop_oneof![Just(TaskKind::Value), Just(TaskKind::Class)],
        ident(),
        ident(),
        proptest::option::of(expr()),
        prop_oneof![Just(FeatureList::All), prop::collection::vec(ident(), 1..4).prop_map(FeatureList::Columns)],
        proptest::option::of(expr()),
        proptest::option::of(prop::collection::vec(prop::collection::vec(literal(), 1..4), 1..3)),
    )
        .prop_map(|(task, target, source_table, infer_predicate, train_features, train_predicate, inline_rows)| {
            PredictStatement {
                task,
                target,
                source_table,
                infer_predicate,
                train_features,
                train_predicate,
                inline_rows,
            }
        })
}

fn statement() -> impl Strategy<Value = Statement> {
    prop_oneof![
        select().prop_map(Statement::Select),
        predict().prop_map(Statement::Predict),
        (
            ident(),
            prop::collection::vec(
                (ident(), data_type(), any::<bool>(), any::<bool>())
                    .prop_map(|(name, ty, unique, nullable)| ColumnDef { name, ty, unique, nullable }),
                1..4
            )
        )
            .prop_map(|(name, columns)| Statement::CreateTable { name, columns }),
        (
            ident(),
            proptest::option::of(prop::collection::vec(ident(), 1..3)),
            prop::collection::vec(prop::collection::vec(expr(), 1..3), 1..3)
        )
            .prop_map(|(table, columns, rows)| Statement::Insert { table, columns, rows }),
        (ident(), prop::collection::vec((ident(), expr()), 1..3), proptest::option::of(expr()))
            .prop_map(|(table, assignments, filter)| Statement::Update { table, assignments, filter }),
        (ident(), proptest::option::of(expr())).prop_map(|(table, filter)| Statement::Delete { table, filter }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn print_parse_fixpoint(s in statement()) {
        let printed = s.to_string();
        let reparsed = parse_statement(&printed).map_err(|e| TestCaseError::fail(format!("{printed}: {e}")))?;
        prop_assert_eq!(&reparsed, &s, "{}", printed);
        prop_assert_eq!(reparsed.to_string(), printed);
    }

    #[test]
    fn syntax_errors_point_into_input(src in "[ -~\n]{0,40}") {
        if let Err(SqlError::Syntax { offset, line, col, .. }) = parse(&src) {
            prop_assert!(offset <= src.len());
            prop_assert!(line >= 1 && col >= 1);
        }
    }

    #[test]
    fn truncated_statements_error_in_bounds(s in statement(), cut in 0.0f64..1.0) {
        let printed = s.to_string();
        let mut end = (printed.len() as f64 * cut) as usize;
        while !printed.is_char_boundary(end) {
            end -= 1;
        }
        let prefix = &printed[..end];
        if let Err(SqlError::Syntax { offset, .. }) = parse(prefix) {
            prop_assert!(offset <= prefix.len());
        }
    }
}
