//! The bundled mini-corpus: two small SQLite databases and twelve tasks,
//! materialized on demand so no binary files ship with the repository.
//!
//! Ten tasks are valid; two carry deliberately broken gold SQL so that gold
//! validation has something to drop. Valid tasks carry `probe_sql` (a first
//! exploratory query) and `wrong_sql` (a plausible but incorrect query) in
//! their extra metadata, which scripted policies use to act out exploration
//! strategies.

use std::fs;
use std::path::Path;

use rusqlite::Connection;
use serde_json::{json, Map, Value};

use super::{load_tasks, save_tasks, DatasetError, DatasetManifest, TaskRecord};

/// Database id of the schema-fragment clone used by the transcript replay.
pub const SCHOOLS_DB_ID: &str = "california_schools";
/// Database id of the sales database most tasks run against.
pub const SALES_DB_ID: &str = "orchard_sales";

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("sqlite error: {0}")]
    Sqlite(#[from] rusqlite::Error),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Write the corpus under `dir`: `dbs/` with the two databases (one in
/// nested BIRD layout, one flat) and `tasks.json`. Returns the loaded
/// manifest. Idempotent: existing files are recreated.
pub fn write_mini_corpus(dir: &Path) -> Result<DatasetManifest, CorpusError> {
    let db_root = dir.join("dbs");
    let schools_dir = db_root.join(SCHOOLS_DB_ID);
    fs::create_dir_all(&schools_dir).map_err(|source| CorpusError::Io {
        path: schools_dir.display().to_string(),
        source,
    })?;

    let schools_path = schools_dir.join(format!("{SCHOOLS_DB_ID}.sqlite"));
    recreate(&schools_path)?;
    build_schools_db(&schools_path)?;

    let sales_path = db_root.join(format!("{SALES_DB_ID}.sqlite"));
    recreate(&sales_path)?;
    build_sales_db(&sales_path)?;

    let tasks_path = dir.join("tasks.json");
    save_tasks(&mini_tasks(), &tasks_path)?;
    Ok(load_tasks(&tasks_path, &db_root)?)
}

fn recreate(path: &Path) -> Result<(), CorpusError> {
    if path.exists() {
        fs::remove_file(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(())
}

fn build_schools_db(path: &Path) -> Result<(), CorpusError> {
    let conn = Connection::open(path)?;
    conn.execute_batch(
        r#"
        CREATE TABLE schools (
            CDSCode TEXT PRIMARY KEY,
            School TEXT,
            Phone TEXT,
            OpenDate DATE,
            County TEXT,
            Charter INTEGER,
            FundingType TEXT
        );
        CREATE TABLE frpm (
            CDSCode TEXT PRIMARY KEY,
            `Charter School (Y/N)` INTEGER,
            `Charter Funding Type` TEXT,
            `Enrollment (K-12)` REAL,
            `Free Meal Count (K-12)` REAL,
            `County Name` TEXT,
            FOREIGN KEY (CDSCode) REFERENCES schools (CDSCode)
        );
        INSERT INTO schools VALUES
            ('01100170109835', 'FAME Public Charter', NULL, '2005-08-29',
             'Alameda', 1, 'Directly funded'),
            ('01100170112607', 'Envision Academy for Arts & Technology',
             '(510) 596-8901', '2006-08-28', 'Alameda', 1, 'Directly funded'),
            ('01100170118489', 'Aspire California College Preparatory Academy',
             '(510) 686-4131', '2005-08-22', 'Alameda', 1, 'Directly funded'),
            ('01611190130625', 'Alameda Science and Technology Institute',
             '(510) 748-4021', '1999-08-30', 'Alameda', 1, 'Directly funded'),
            ('01611270130450', 'Bay Area School of Enterprise',
             '(510) 995-4300', '2003-09-02', 'Alameda', 1, 'Locally funded'),
            ('01612590130229', 'Alameda High',
             '(510) 337-7022', '1996-07-01', 'Alameda', 0, NULL),
            ('01612590137448', 'Encinal Junior/Senior High',
             '(510) 748-4023', '2001-08-01', 'Alameda', 0, NULL),
            ('04100410430231', 'Ipakanni Early College Charter',
             '(530) 532-5757', '2008-07-01', 'Butte', 1, 'Directly funded');
        INSERT INTO frpm VALUES
            ('01100170109835', 1, 'Directly funded', 1087.0, 565.0, 'Alameda'),
            ('01100170112607', 1, 'Directly funded', 395.0, 186.0, 'Alameda'),
            ('01100170118489', 1, 'Directly funded', 244.0, 134.0, 'Alameda'),
            ('01611190130625', 1, 'Directly funded', 198.0, 85.0, 'Alameda'),
            ('01611270130450', 1, 'Locally funded', 182.0, 99.0, 'Alameda'),
            ('01612590130229', 0, NULL, 1800.0, 630.0, 'Alameda'),
            ('01612590137448', 0, NULL, 1100.0, 420.0, 'Alameda'),
            ('04100410430231', 1, 'Directly funded', 85.0, 60.0, 'Butte');
        "#,
    )?;
    Ok(())
}

fn build_sales_db(path: &Path) -> Result<(), CorpusError> {
    let conn = Connection::open(path)?;
    conn.execute_batch(
        r#"
        CREATE TABLE products (
            id INTEGER PRIMARY KEY,
            name TEXT,
            category TEXT,
            price REAL
        );
        CREATE TABLE sales (
            id INTEGER PRIMARY KEY,
            product_id INTEGER,
            region TEXT,
            quantity INTEGER,
            sale_date TEXT,
            FOREIGN KEY (product_id) REFERENCES products (id)
        );
        INSERT INTO products VALUES
            (1, 'Fuji Apple', 'apple', 1.2),
            (2, 'Gala Apple', 'apple', 1.1),
            (3, 'Navel Orange', 'citrus', 0.9),
            (4, 'Meyer Lemon', 'citrus', 0.5),
            (5, 'Bartlett Pear', 'pear', 1.4),
            (6, 'Comice Pear', 'pear', 1.8),
            (7, 'Key Lime', 'citrus', 0.35);
        INSERT INTO sales VALUES
            (1, 1, 'north', 120, '2024-01-05'),
            (2, 1, 'south', 80, '2024-01-07'),
            (3, 2, 'north', 60, '2024-01-10'),
            (4, 3, 'south', 200, '2024-02-02'),
            (5, 3, 'north', 150, '2024-02-03'),
            (6, 4, 'south', 90, '2024-02-10'),
            (7, 5, 'north', 40, '2024-03-01'),
            (8, 6, 'north', 25, '2024-03-04'),
            (9, 7, 'south', 75, '2024-03-11'),
            (10, 2, 'south', 55, '2024-03-15');
        "#,
    )?;
    Ok(())
}

/// The gold query of the transcript-replay task (the corrected join).
pub const SCHOOLS_GOLD_SQL: &str = "SELECT s.Phone\nFROM schools s\nJOIN frpm f ON s.CDSCode = f.CDSCode\nWHERE f.`Charter School (Y/N)` = 1 AND f.`Charter Funding Type` = 'Directly funded' AND s.OpenDate > '2000-01-01'";

/// The first-attempt query that fails with `no such column: s.Charter
/// Funding Type` (the filter column lives in `frpm`, not `schools`).
pub const SCHOOLS_PROBE_SQL: &str = "SELECT s.Phone\nFROM schools s\nJOIN frpm f ON s.CDSCode = f.CDSCode\nWHERE f.`Charter School (Y/N)` = 1 AND s.`Charter Funding Type` = 'Directly funded' AND s.OpenDate > '2000-01-01'";

fn task(
    id: &str,
    question: &str,
    db_id: &str,
    gold: &str,
    evidence: Option<&str>,
    probe: Option<&str>,
    wrong: Option<&str>,
) -> TaskRecord {
    let mut extra = Map::new();
    if let Some(p) = probe {
        extra.insert("probe_sql".to_string(), json!(p));
    }
    if let Some(w) = wrong {
        extra.insert("wrong_sql".to_string(), json!(w));
    }
    TaskRecord {
        id: id.to_string(),
        question: question.to_string(),
        db_id: db_id.to_string(),
        gold_sql: gold.to_string(),
        evidence: evidence.map(str::to_string),
        extra,
    }
}

/// The twelve bundled tasks. The first ten are valid; the last two carry
/// broken gold SQL on purpose.
pub fn mini_tasks() -> Vec<TaskRecord> {
    vec![
        task(
            "mini_001",
            "List the phone numbers of the directly charter-funded schools \
             that opened after 2000/1/1.",
            SCHOOLS_DB_ID,
            SCHOOLS_GOLD_SQL,
            Some("Charter schools refers to `Charter School (Y/N)` = 1 in the frpm table."),
            Some(SCHOOLS_PROBE_SQL),
            Some(
                "SELECT s.Phone FROM schools s JOIN frpm f ON s.CDSCode = f.CDSCode \
                 WHERE f.`Charter School (Y/N)` = 1 AND f.`Charter Funding Type` = \
                 'Directly funded' AND s.OpenDate < '2000-01-01'",
            ),
        ),
        task(
            "mini_002",
            "How many products are in the apple category?",
            SALES_DB_ID,
            "SELECT COUNT(*) FROM products WHERE category = 'apple'",
            None,
            Some("SELECT name FROM products WHERE category = 'apple'"),
            Some("SELECT COUNT(*) FROM products WHERE category = 'citrus'"),
        ),
        task(
            "mini_003",
            "List the names of all citrus products.",
            SALES_DB_ID,
            "SELECT name FROM products WHERE category = 'citrus'",
            None,
            Some("SELECT name, price FROM products WHERE category = 'citrus'"),
            Some("SELECT name FROM products WHERE category = 'apple'"),
        ),
        task(
            "mini_004",
            "What is the total quantity sold in the south region?",
            SALES_DB_ID,
            "SELECT SUM(quantity) FROM sales WHERE region = 'south'",
            None,
            Some("SELECT quantity FROM sales WHERE region = 'south'"),
            Some("SELECT SUM(quantity) FROM sales WHERE region = 'north'"),
        ),
        task(
            "mini_005",
            "Which product has the highest price?",
            SALES_DB_ID,
            "SELECT name FROM products ORDER BY price DESC LIMIT 1",
            None,
            Some("SELECT name, price FROM products ORDER BY price DESC LIMIT 1"),
            Some("SELECT name FROM products ORDER BY price ASC LIMIT 1"),
        ),
        task(
            "mini_006",
            "List each product name with its total quantity sold, for \
             products that sold more than 100 units in total.",
            SALES_DB_ID,
            "SELECT p.name, SUM(s.quantity) FROM products p JOIN sales s \
             ON p.id = s.product_id GROUP BY p.id, p.name \
             HAVING SUM(s.quantity) > 100",
            None,
            Some(
                "SELECT p.name FROM products p JOIN sales s ON p.id = s.product_id \
                 GROUP BY p.id, p.name HAVING SUM(s.quantity) > 100",
            ),
            Some(
                "SELECT p.name, SUM(s.quantity) FROM products p JOIN sales s \
                 ON p.id = s.product_id GROUP BY p.id, p.name \
                 HAVING SUM(s.quantity) < 100",
            ),
        ),
        task(
            "mini_007",
            "How many distinct regions appear in the sales table?",
            SALES_DB_ID,
            "SELECT COUNT(DISTINCT region) FROM sales",
            None,
            Some("SELECT DISTINCT region FROM sales"),
            Some("SELECT COUNT(*) FROM sales"),
        ),
        task(
            "mini_008",
            "What is the average price of pear products?",
            SALES_DB_ID,
            "SELECT AVG(price) FROM products WHERE category = 'pear'",
            None,
            Some("SELECT price FROM products WHERE category = 'pear'"),
            Some("SELECT AVG(price) FROM products WHERE category = 'apple'"),
        ),
        task(
            "mini_009",
            "On which dates was the Navel Orange sold?",
            SALES_DB_ID,
            "SELECT s.sale_date FROM sales s JOIN products p \
             ON s.product_id = p.id WHERE p.name = 'Navel Orange'",
            None,
            Some(
                "SELECT s.sale_date, s.quantity FROM sales s JOIN products p \
                 ON s.product_id = p.id WHERE p.name = 'Navel Orange'",
            ),
            Some(
                "SELECT s.sale_date FROM sales s JOIN products p \
                 ON s.product_id = p.id WHERE p.name = 'Meyer Lemon'",
            ),
        ),
        task(
            "mini_010",
            "Which regions have bought citrus products? List each region once.",
            SALES_DB_ID,
            "SELECT DISTINCT s.region FROM sales s JOIN products p \
             ON s.product_id = p.id WHERE p.category = 'citrus'",
            None,
            Some(
                "SELECT p.name FROM products p JOIN sales s ON s.product_id = p.id \
                 WHERE p.category = 'citrus'",
            ),
            Some(
                "SELECT DISTINCT s.region FROM sales s JOIN products p \
                 ON s.product_id = p.id WHERE p.category = 'pear'",
            ),
        ),
        // Broken on purpose: syntax error.
        task(
            "mini_011",
            "List all product names.",
            SALES_DB_ID,
            "SELEC name FROM products",
            None,
            None,
            None,
        ),
        // Broken on purpose: the column lives in frpm, not schools.
        task(
            "mini_012",
            "List the charter funding types recorded for schools.",
            SCHOOLS_DB_ID,
            "SELECT s.`Charter Funding Type` FROM schools s",
            None,
            None,
            None,
        ),
    ]
}

/// Convenience accessors for the scripted-policy extras.
pub fn probe_sql(task: &TaskRecord) -> Option<&str> {
    task.extra.get("probe_sql").and_then(Value::as_str)
}

pub fn wrong_sql(task: &TaskRecord) -> Option<&str> {
    task.extra.get("wrong_sql").and_then(Value::as_str)
}
