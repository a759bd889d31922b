//! Deterministic generator for the `tpch-mini` profile: a single
//! lineitem-shaped table (16 columns, mixed integer/decimal/date/varchar)
//! whose value distributions give the benchmark queries predictable
//! selectivities. Orders span four lines, so the two-column key makes
//! order-level grouping an index prefix.

use ndp_core::schema::Schema;
use ndp_core::util::XorShift64;
use ndp_core::value::{parse_date, ColumnType as Ct, TypeTag as T, Value};

pub const TABLE: &str = "lineitem";
pub const INDEX_ID: u64 = 1001;
pub const LINES_PER_ORDER: i64 = 4;

pub fn lineitem_schema() -> Schema {
    Schema::new(
        TABLE,
        vec![
            ("l_orderkey", Ct::new(T::Int64)),
            ("l_linenumber", Ct::new(T::Int64)),
            ("l_partkey", Ct::new(T::Int64)),
            ("l_suppkey", Ct::new(T::Int64)),
            ("l_quantity", Ct::new(T::Decimal { precision: 12, scale: 2 })),
            ("l_extendedprice", Ct::new(T::Decimal { precision: 12, scale: 2 })),
            ("l_discount", Ct::new(T::Decimal { precision: 12, scale: 2 })),
            ("l_tax", Ct::new(T::Decimal { precision: 12, scale: 2 })),
            ("l_returnflag", Ct::new(T::Varchar { max_len: 1 })),
            ("l_linestatus", Ct::new(T::Varchar { max_len: 1 })),
            ("l_shipdate", Ct::new(T::Date)),
            ("l_commitdate", Ct::new(T::Date)),
            ("l_receiptdate", Ct::new(T::Date)),
            ("l_shipinstruct", Ct::nullable(T::Varchar { max_len: 25 })),
            ("l_shipmode", Ct::new(T::Varchar { max_len: 10 })),
            ("l_comment", Ct::nullable(T::Varchar { max_len: 44 })),
        ],
        2,
        INDEX_ID,
    )
    .expect("static schema is valid")
}

const FLAGS: [&str; 3] = ["A", "N", "R"];
const STATUS: [&str; 2] = ["F", "O"];
const INSTRUCT: [&str; 4] =
    ["DELIVER IN PERSON", "COLLECT COD", "NONE", "TAKE BACK RETURN"];
const MODES: [&str; 7] = ["REG AIR", "AIR", "RAIL", "SHIP", "TRUCK", "MAIL", "FOB"];
const WORDS: [&str; 8] =
    ["quick", "brown", "packages", "pending", "ironic", "deposits", "furious", "accounts"];

/// Generates `rows` lines deterministically from `seed`, sorted by key.
pub fn generate(rows: u64, seed: u64) -> Vec<Vec<Value>> {
    let mut rng = XorShift64::new(seed ^ 0x5EED0F11E5);
    let ship_base = parse_date("1992-01-01").unwrap();
    let ship_span = (parse_date("1998-12-01").unwrap() - ship_base) as u64;
    let mut out = Vec::with_capacity(rows as usize);
    for i in 0..rows as i64 {
        let orderkey = i / LINES_PER_ORDER + 1;
        let linenumber = i % LINES_PER_ORDER + 1;
        let quantity = 100 + (rng.next_range(4900) as i64); // 1.00..50.00
        let price = 90_000 + (rng.next_range(9_000_000) as i64); // 900.00..90900.00
        let discount = rng.next_range(11) as i64; // 0.00..0.10 in cents
        let tax = rng.next_range(9) as i64;
        let shipdate = ship_base + rng.next_range(ship_span) as i32;
        let commitdate = shipdate + rng.next_range(60) as i32 - 30;
        let receiptdate = shipdate + 1 + rng.next_range(30) as i32;
        let instruct = if rng.next_range(50) == 0 {
            Value::Null
        } else {
            Value::Varchar(INSTRUCT[rng.next_range(4) as usize].into())
        };
        let comment = if rng.next_range(40) == 0 {
            Value::Null
        } else {
            let a = WORDS[rng.next_range(8) as usize];
            let b = WORDS[rng.next_range(8) as usize];
            Value::Varchar(format!("{a} {b}").into_bytes())
        };
        out.push(vec![
            Value::Int64(orderkey),
            Value::Int64(linenumber),
            Value::Int64(1 + rng.next_range(20_000) as i64),
            Value::Int64(1 + rng.next_range(1_000) as i64),
            Value::Decimal(quantity),
            Value::Decimal(price),
            Value::Decimal(discount),
            Value::Decimal(tax),
            Value::Varchar(FLAGS[rng.next_range(3) as usize].into()),
            Value::Varchar(STATUS[rng.next_range(2) as usize].into()),
            Value::Date(shipdate),
            Value::Date(commitdate),
            Value::Date(receiptdate),
            instruct,
            Value::Varchar(MODES[rng.next_range(7) as usize].into()),
            comment,
        ]);
    }
    out
}

/// Writes generated rows as CSV for the `load` path.
pub fn write_csv(path: &std::path::Path, rows: &[Vec<Value>]) -> std::io::Result<()> {
    use std::io::Write;
    let schema = lineitem_schema();
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for row in rows {
        let fields: Vec<String> = row
            .iter()
            .zip(schema.columns.iter())
            .map(|(v, c)| match v {
                Value::Null => String::new(),
                other => other.render(&c.ty.tag),
            })
            .collect();
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}
