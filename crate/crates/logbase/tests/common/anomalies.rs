//! The classic snapshot-isolation histories, run with a fixed interleaving on
//! one thread. Each returns whether the anomaly was observed.

use logbase::schema::TableSchema;
use logbase::{Engine, EngineConfig, Error};

const T: &str = "acct";
const G: &str = "bal";

pub struct History {
    pub name: &'static str,
    /// Whether snapshot isolation allows this anomaly.
    pub permitted: bool,
    pub run: fn(&Engine) -> bool,
}

fn fresh(dir: &std::path::Path) -> Engine {
    let e = Engine::open(dir, EngineConfig::default()).unwrap();
    e.create_table(TableSchema::single_group(T, G), &[]).unwrap();
    for k in ["x", "y", "p1", "p2"] {
        e.put(T, k.as_bytes(), G, b"50").unwrap();
    }
    e
}

fn read(e: &Engine, t: &mut logbase::Transaction, k: &str) -> Option<Vec<u8>> {
    e.txn_read(t, T, k.as_bytes(), G).unwrap()
}

fn write(e: &Engine, t: &mut logbase::Transaction, k: &str, v: &str) {
    e.txn_write(t, T, k.as_bytes(), G, v.as_bytes()).unwrap();
}

fn conflicted(r: logbase::Result<u64>) -> bool {
    matches!(r, Err(Error::Conflict { .. }))
}

/// w1[x] r2[x]: T2 must not see T1's uncommitted value.
fn dirty_read(e: &Engine) -> bool {
    let mut t1 = e.begin();
    write(e, &mut t1, "x", "10");
    let mut t2 = e.begin();
    let seen = read(e, &mut t2, "x");
    e.abort(&mut t1);
    e.commit(&mut t2).unwrap();
    seen.as_deref() == Some(b"10")
}

/// r1[x] w2[x] c2 r1[x]: T1's two reads must agree.
fn fuzzy_read(e: &Engine) -> bool {
    let mut t1 = e.begin();
    let first = read(e, &mut t1, "x");
    let mut t2 = e.begin();
    write(e, &mut t2, "x", "10");
    e.commit(&mut t2).unwrap();
    let second = read(e, &mut t1, "x");
    e.commit(&mut t1).unwrap();
    first != second
}

/// r1[x] w2[x] w2[y] c2 r1[y]: T2 moves 40 from x to y; T1 must not see a
/// total other than 100.
fn read_skew(e: &Engine) -> bool {
    let mut t1 = e.begin();
    let x = read(e, &mut t1, "x").unwrap();
    let mut t2 = e.begin();
    write(e, &mut t2, "x", "10");
    write(e, &mut t2, "y", "90");
    e.commit(&mut t2).unwrap();
    let y = read(e, &mut t1, "y").unwrap();
    e.commit(&mut t1).unwrap();
    let n = |v: Vec<u8>| String::from_utf8(v).unwrap().parse::<i64>().unwrap();
    n(x) + n(y) != 100
}

/// r1[P] w2[y in P] c2 r1[P] w1[z] c1 over the predicate "keys starting with p".
/// The anomaly needs T1 to see the new row or to commit a decision based on
/// a stale predicate read.
fn phantom(e: &Engine) -> bool {
    let mut t1 = e.begin();
    let before = e.txn_read_range(&mut t1, T, G, b"p", Some(b"q")).unwrap();
    let mut t2 = e.begin();
    write(e, &mut t2, "p3", "50");
    e.commit(&mut t2).unwrap();
    let after = e.txn_read_range(&mut t1, T, G, b"p", Some(b"q")).unwrap();
    write(e, &mut t1, "count", &before.len().to_string());
    let committed = !conflicted(e.commit(&mut t1));
    before != after || committed
}

/// w1[x] w2[x] c1 c2: at most one of two concurrent writers may commit.
fn dirty_write(e: &Engine) -> bool {
    let mut t1 = e.begin();
    let mut t2 = e.begin();
    write(e, &mut t1, "x", "1");
    write(e, &mut t2, "x", "2");
    let c1 = !conflicted(e.commit(&mut t1));
    let c2 = !conflicted(e.commit(&mut t2));
    c1 && c2
}

/// r1[x] w2[x] c2 w1[x] c1: T1 would overwrite T2's update unseen.
fn lost_update(e: &Engine) -> bool {
    let mut t1 = e.begin();
    let _ = read(e, &mut t1, "x");
    let mut t2 = e.begin();
    let _ = read(e, &mut t2, "x");
    write(e, &mut t2, "x", "60");
    e.commit(&mut t2).unwrap();
    write(e, &mut t1, "x", "70");
    !conflicted(e.commit(&mut t1))
}

/// r1[x] r2[y] w1[y] w2[x] c1 c2: disjoint writes based on overlapping
/// reads. Snapshot isolation lets both commit.
fn write_skew(e: &Engine) -> bool {
    let mut t1 = e.begin();
    let mut t2 = e.begin();
    let _ = read(e, &mut t1, "x");
    let _ = read(e, &mut t2, "y");
    write(e, &mut t1, "y", "0");
    write(e, &mut t2, "x", "0");
    let c1 = !conflicted(e.commit(&mut t1));
    let c2 = !conflicted(e.commit(&mut t2));
    c1 && c2
}

pub const HISTORIES: [History; 7] = [
    History { name: "dirty read", permitted: false, run: dirty_read },
    History { name: "fuzzy read", permitted: false, run: fuzzy_read },
    History { name: "read skew", permitted: false, run: read_skew },
    History { name: "phantom", permitted: false, run: phantom },
    History { name: "dirty write", permitted: false, run: dirty_write },
    History { name: "lost update", permitted: false, run: lost_update },
    History { name: "write skew", permitted: true, run: write_skew },
];

/// Runs one history on a fresh engine; returns whether the anomaly occurred.
pub fn run(h: &History) -> bool {
    let dir = tempfile::tempdir().unwrap();
    let e = fresh(dir.path());
    (h.run)(&e)
}
