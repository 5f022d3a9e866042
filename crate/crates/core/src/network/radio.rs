use crate::engine::SimTime;

/// Why a node keeps its receiver on. Windows with different tags are kept
/// apart so cutting one short never shortens another.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Listen {
    Scan,
    DioWake,
    Assoc,
    OwnCap,
    ParentCap,
    ParentBeacon,
}

#[derive(Clone, Copy, Debug)]
struct Window {
    from: u64,
    to: u64,
    tag: Listen,
}

/// Windows that ended this long ago cannot matter to any frame still in
/// flight.
const ARCHIVE_AFTER: u64 = 4096;

/// Half-duplex radio: receiving whenever inside a listen window and not
/// transmitting, asleep otherwise.
#[derive(Clone, Debug, Default)]
pub(crate) struct Radio {
    active: Vec<Window>,
    archived: Vec<(u64, u64)>,
    tx: Vec<(u64, u64)>,
}

impl Radio {
    pub fn listen(&mut self, tag: Listen, from: SimTime, to: SimTime) {
        if to <= from {
            return;
        }
        self.archive(from.0);
        self.active.push(Window {
            from: from.0,
            to: to.0,
            tag,
        });
    }

    /// Ends every `tag` window that is open at `now`.
    pub fn trim(&mut self, tag: Listen, now: SimTime) {
        for w in self.active.iter_mut().filter(|w| w.tag == tag) {
            if w.from <= now.0 && now.0 < w.to {
                w.to = now.0;
            }
        }
        self.active.retain(|w| w.to > w.from);
    }

    fn archive(&mut self, now: u64) {
        if self.active.len() < 16 {
            return;
        }
        let horizon = now.saturating_sub(ARCHIVE_AFTER);
        let archived = &mut self.archived;
        self.active.retain(|w| {
            if w.to < horizon {
                archived.push((w.from, w.to));
                false
            } else {
                true
            }
        });
    }

    pub fn begin_tx(&mut self, from: SimTime, to: SimTime) {
        self.tx.push((from.0, to.0));
    }

    pub fn transmitting_at(&self, t: SimTime) -> bool {
        self.tx
            .iter()
            .rev()
            .take_while(|(_, to)| *to > t.0.saturating_sub(ARCHIVE_AFTER))
            .any(|&(from, to)| from <= t.0 && t.0 < to)
    }

    /// Receiver on for all of `[start, end)`.
    pub fn is_listening(&self, start: SimTime, end: SimTime) -> bool {
        let (s, e) = (start.0, end.0);
        let overlaps_tx = self
            .tx
            .iter()
            .rev()
            .take_while(|(_, to)| *to + ARCHIVE_AFTER > s)
            .any(|&(from, to)| from < e && s < to);
        if overlaps_tx {
            return false;
        }
        let mut cur = s;
        loop {
            if cur >= e {
                return true;
            }
            let reach = self
                .active
                .iter()
                .filter(|w| w.from <= cur && cur < w.to)
                .map(|w| w.to)
                .max();
            match reach {
                Some(to) => cur = to,
                None => return false,
            }
        }
    }

    /// Receive and transmit intervals clipped to `[0, end)`; disjoint.
    pub fn finalize(&self, end: SimTime) -> (Vec<(u64, u64)>, Vec<(u64, u64)>) {
        let mut windows: Vec<(u64, u64)> = self
            .archived
            .iter()
            .copied()
            .chain(self.active.iter().map(|w| (w.from, w.to)))
            .map(|(f, t)| (f, t.min(end.0)))
            .filter(|(f, t)| f < t)
            .collect();
        windows.sort_unstable();
        let mut union: Vec<(u64, u64)> = Vec::with_capacity(windows.len());
        for (f, t) in windows {
            match union.last_mut() {
                Some(last) if f <= last.1 => last.1 = last.1.max(t),
                _ => union.push((f, t)),
            }
        }
        let mut tx: Vec<(u64, u64)> = self
            .tx
            .iter()
            .map(|&(f, t)| (f, t.min(end.0)))
            .filter(|(f, t)| f < t)
            .collect();
        tx.sort_unstable();

        let mut rx = Vec::with_capacity(union.len());
        let mut j = 0;
        for (f, t) in union {
            let mut cur = f;
            while j < tx.len() && tx[j].1 <= cur {
                j += 1;
            }
            let mut k = j;
            while k < tx.len() && tx[k].0 < t {
                if tx[k].0 > cur {
                    rx.push((cur, tx[k].0));
                }
                cur = cur.max(tx[k].1);
                k += 1;
            }
            if cur < t {
                rx.push((cur, t));
            }
        }
        (rx, tx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(x: u64) -> SimTime {
        SimTime(x)
    }

    #[test]
    fn coverage_across_windows() {
        let mut r = Radio::default();
        r.listen(Listen::Scan, t(0), t(100));
        r.listen(Listen::Assoc, t(90), t(200));
        assert!(r.is_listening(t(50), t(150)));
        assert!(!r.is_listening(t(150), t(250)));
    }

    #[test]
    fn trim_only_touches_its_tag() {
        let mut r = Radio::default();
        r.listen(Listen::Scan, t(0), t(100));
        r.listen(Listen::Assoc, t(0), t(50));
        r.trim(Listen::Scan, t(20));
        assert!(r.is_listening(t(10), t(50)));
        assert!(!r.is_listening(t(10), t(60)));
    }

    #[test]
    fn transmitting_blocks_reception() {
        let mut r = Radio::default();
        r.listen(Listen::OwnCap, t(0), t(1000));
        r.begin_tx(t(100), t(142));
        assert!(!r.is_listening(t(120), t(200)));
        assert!(r.is_listening(t(142), t(200)));
        assert!(r.transmitting_at(t(100)));
        assert!(!r.transmitting_at(t(142)));
    }

    #[test]
    fn finalize_splits_rx_around_tx() {
        let mut r = Radio::default();
        r.listen(Listen::OwnCap, t(0), t(100));
        r.listen(Listen::ParentCap, t(50), t(300));
        r.begin_tx(t(20), t(30));
        r.begin_tx(t(400), t(420));
        let (rx, tx) = r.finalize(t(410));
        assert_eq!(rx, vec![(0, 20), (30, 300)]);
        assert_eq!(tx, vec![(20, 30), (400, 410)]);
    }
}
