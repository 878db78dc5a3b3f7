//! Event queue ordered by time, then insertion sequence.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Event {
    Arrival { workload: u32, session: u32 },
    DeviceComplete { device: u32, request: u64 },
    QuantumBoundary,
    DeadlineScan,
    ModeEval,
    PlanSwap { index: u32 },
}

#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<(SimTime, u64, Event)>>,
    seq: u64,
    now: SimTime,
}

impl EventQueue {
    pub fn new() -> Self {
        EventQueue::default()
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Schedules `event`; times in the past are clamped to now.
    pub fn push(&mut self, at: SimTime, event: Event) {
        let at = at.max(self.now);
        self.heap.push(Reverse((at, self.seq, event)));
        self.seq += 1;
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|Reverse((t, _, _))| *t)
    }

    pub fn pop(&mut self) -> Option<(SimTime, Event)> {
        let Reverse((t, _, e)) = self.heap.pop()?;
        debug_assert!(t >= self.now);
        self.now = t;
        Some((t, e))
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_times_fire_in_insertion_order() {
        let mut q = EventQueue::new();
        q.push(SimTime(5), Event::ModeEval);
        q.push(SimTime(5), Event::QuantumBoundary);
        q.push(SimTime(1), Event::DeadlineScan);
        q.push(SimTime(5), Event::PlanSwap { index: 0 });
        let order: Vec<Event> = std::iter::from_fn(|| q.pop().map(|(_, e)| e)).collect();
        assert_eq!(
            order,
            vec![Event::DeadlineScan, Event::ModeEval, Event::QuantumBoundary, Event::PlanSwap { index: 0 }]
        );
    }

    #[test]
    fn time_never_decreases() {
        let mut q = EventQueue::new();
        q.push(SimTime(10), Event::ModeEval);
        q.pop();
        q.push(SimTime(3), Event::ModeEval);
        assert_eq!(q.pop().unwrap().0, SimTime(10));
    }
}
