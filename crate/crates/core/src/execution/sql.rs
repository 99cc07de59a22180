//! Read-only SQLite execution with a wall-clock deadline and row cap.

use std::path::Path;
use std::time::Instant;

use rusqlite::{Connection, OpenFlags};

use super::{ExecError, ExecLimits, ExecOutcome, Value};

fn value_from_sql(v: rusqlite::types::ValueRef<'_>) -> Value {
    use rusqlite::types::ValueRef;
    match v {
        ValueRef::Null => Value::null(),
        ValueRef::Integer(i) => Value::int(i),
        ValueRef::Real(r) => Value::real(r),
        ValueRef::Text(t) => Value::text(String::from_utf8_lossy(t).into_owned()),
        ValueRef::Blob(b) => Value::text(format!("<blob {} bytes>", b.len())),
    }
}

fn classify(e: rusqlite::Error) -> ExecError {
    match &e {
        rusqlite::Error::SqliteFailure(err, _) => match err.code {
            rusqlite::ErrorCode::OperationInterrupted => ExecError::Timeout,
            rusqlite::ErrorCode::ReadOnly => {
                ExecError::BackendError(format!("write rejected on read-only database: {e}"))
            }
            _ => ExecError::BackendError(e.to_string()),
        },
        _ => ExecError::BackendError(e.to_string()),
    }
}

/// Runs one SQL statement against a SQLite file opened read-only.
/// Statement compilation errors map to `QuerySyntax`; the deadline is
/// enforced with a progress handler that interrupts long evaluations.
pub fn exec_sql(path: &Path, sql: &str, limits: &ExecLimits) -> Result<ExecOutcome, ExecError> {
    let conn = Connection::open_with_flags(
        path,
        OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
    )
    .map_err(|e| ExecError::BackendError(format!("opening {}: {e}", path.display())))?;

    let deadline = Instant::now() + limits.timeout;
    conn.progress_handler(1000, Some(move || Instant::now() >= deadline));

    let mut stmt = conn.prepare(sql).map_err(|e| match e {
        rusqlite::Error::SqliteFailure(err, msg)
            if err.code == rusqlite::ErrorCode::OperationInterrupted =>
        {
            classify(rusqlite::Error::SqliteFailure(err, msg))
        }
        other => ExecError::QuerySyntax(other.to_string()),
    })?;

    let columns: Vec<String> = stmt.column_names().iter().map(|s| s.to_string()).collect();
    let n_cols = columns.len();

    let mut rows_iter = stmt.query([]).map_err(classify)?;
    let mut rows: Vec<Vec<Value>> = Vec::new();
    let mut truncated = 0usize;
    loop {
        match rows_iter.next() {
            Ok(Some(row)) => {
                if rows.len() >= limits.max_rows {
                    truncated += 1;
                    continue;
                }
                let mut cells = Vec::with_capacity(n_cols);
                for i in 0..n_cols {
                    let cell = row.get_ref(i).map_err(classify)?;
                    cells.push(value_from_sql(cell));
                }
                rows.push(cells);
            }
            Ok(None) => break,
            Err(e) => return Err(classify(e)),
        }
    }

    Ok(ExecOutcome::Rows {
        columns,
        rows,
        truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    fn fixture_db(n_rows: i64) -> tempfile::NamedTempFile {
        let file = tempfile::NamedTempFile::new().unwrap();
        let conn = Connection::open(file.path()).unwrap();
        conn.execute_batch(
            "CREATE TABLE singer (Singer_ID INTEGER PRIMARY KEY, Name TEXT, Age REAL);",
        )
        .unwrap();
        for i in 0..n_rows {
            conn.execute(
                "INSERT INTO singer VALUES (?1, ?2, ?3)",
                rusqlite::params![i, format!("singer-{i}"), 20.0 + i as f64],
            )
            .unwrap();
        }
        file
    }

    #[test]
    fn select_returns_typed_rows() {
        let db = fixture_db(3);
        let outcome = exec_sql(
            db.path(),
            "SELECT Singer_ID, Name FROM singer ORDER BY Singer_ID",
            &ExecLimits::default(),
        )
        .unwrap();
        let ExecOutcome::Rows { columns, rows, truncated } = outcome else {
            panic!()
        };
        assert_eq!(columns, vec!["Singer_ID", "Name"]);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0][0], Value::int(0));
        assert_eq!(rows[0][1], Value::text("singer-0"));
        assert_eq!(truncated, 0);
    }

    #[test]
    fn syntax_error_maps_to_query_syntax() {
        let db = fixture_db(1);
        let err = exec_sql(db.path(), "SELEKT * FROM singer", &ExecLimits::default()).unwrap_err();
        assert!(matches!(err, ExecError::QuerySyntax(_)), "{err:?}");
    }

    #[test]
    fn unknown_table_is_query_syntax() {
        let db = fixture_db(1);
        let err = exec_sql(db.path(), "SELECT * FROM ghost", &ExecLimits::default()).unwrap_err();
        assert!(matches!(err, ExecError::QuerySyntax(_)), "{err:?}");
    }

    #[test]
    fn writes_are_rejected() {
        let db = fixture_db(1);
        let err = exec_sql(
            db.path(),
            "DELETE FROM singer",
            &ExecLimits::default(),
        )
        .unwrap_err();
        assert!(matches!(err, ExecError::BackendError(_)), "{err:?}");
    }

    #[test]
    fn max_rows_truncates_with_remainder_count() {
        let db = fixture_db(12);
        let limits = ExecLimits {
            max_rows: 5,
            ..ExecLimits::default()
        };
        let outcome = exec_sql(db.path(), "SELECT Name FROM singer", &limits).unwrap();
        let ExecOutcome::Rows { rows, truncated, .. } = outcome else {
            panic!()
        };
        assert_eq!(rows.len(), 5);
        assert_eq!(truncated, 7);
    }

    #[test]
    fn deadline_interrupts_long_queries() {
        let db = fixture_db(40);
        let limits = ExecLimits {
            timeout: Duration::from_millis(50),
            max_rows: 500,
        };
        // Cartesian self-joins blow up evaluation time without touching disk.
        let err = exec_sql(
            db.path(),
            "SELECT count(*) FROM singer a, singer b, singer c, singer d, singer e",
            &limits,
        )
        .unwrap_err();
        assert!(matches!(err, ExecError::Timeout), "{err:?}");
    }

    #[test]
    fn null_and_real_cells_render() {
        let db = fixture_db(1);
        let outcome = exec_sql(
            db.path(),
            "SELECT NULL AS n, Age FROM singer",
            &ExecLimits::default(),
        )
        .unwrap();
        let ExecOutcome::Rows { rows, .. } = outcome else { panic!() };
        assert_eq!(rows[0][0], Value::null());
        assert_eq!(rows[0][1], Value::real(20.0));
    }
}
