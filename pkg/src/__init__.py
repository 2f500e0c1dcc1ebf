# flowmarket
