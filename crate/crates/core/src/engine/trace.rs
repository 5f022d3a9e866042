use std::fmt::Write as _;

use super::{NodeId, SimTime};

/// Event trace, one `tick<TAB>node<TAB>kind<TAB>detail` line per entry.
#[derive(Debug, Default, Clone)]
pub struct Trace {
    enabled: bool,
    text: String,
    lines: usize,
}

impl Trace {
    pub fn new(enabled: bool) -> Self {
        Trace {
            enabled,
            ..Default::default()
        }
    }

    pub fn enabled(&self) -> bool {
        self.enabled
    }

    pub fn emit(&mut self, tick: SimTime, node: NodeId, kind: &str, detail: std::fmt::Arguments<'_>) {
        if !self.enabled {
            return;
        }
        let _ = write!(self.text, "{tick}\t{node}\t{kind}\t");
        let _ = self.text.write_fmt(detail);
        self.text.push('\n');
        self.lines += 1;
    }

    pub fn line_count(&self) -> usize {
        self.lines
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disabled_trace_records_nothing() {
        let mut t = Trace::new(false);
        t.emit(SimTime(1), NodeId(0), "boot", format_args!(""));
        assert_eq!(t.line_count(), 0);
        assert!(t.as_str().is_empty());
    }

    #[test]
    fn tab_separated_lines() {
        let mut t = Trace::new(true);
        t.emit(SimTime(42), NodeId(3), "tx", format_args!("kind={} bytes={}", "beacon", 15));
        assert_eq!(t.as_str(), "42\t3\ttx\tkind=beacon bytes=15\n");
    }
}
